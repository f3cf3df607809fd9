//! Semiclassical propagation: the anisotropic packet, the double phase space
//! anisotropy form `Q`, the phase space kernel `K_sc`, quadrature propagation
//! of phase space and position space data, and the van Vleck reduction.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{check_phase_spacing, Axis, ComplexField, Domain};
use crate::flow::{
    ehrenfest_guard, integrate_characteristics, EhrenfestWarning, FlowOptions, SiegelMatrix,
    TrajectoryBundle,
};
use crate::linalg::{self, CMatrix, RMatrix, C64, I};
use crate::models::{dot, Hamiltonian, PhasePoint};

/// A packet launched from `base` and carried along its characteristic.
#[derive(Debug, Clone)]
pub struct PropagatedPacket {
    pub bundle: TrajectoryBundle,
    pub hbar: f64,
    pub base: PhasePoint,
}

impl PropagatedPacket {
    pub fn new(model: &dyn Hamiltonian, base: PhasePoint, t: f64, hbar: f64, opts: &FlowOptions) -> Result<Self> {
        let bundle = integrate_characteristics(model, &base, t, opts)?;
        Ok(Self { bundle, hbar, base })
    }
}

/// Value of the propagated packet at time t and position x.
pub fn eval_packet(pkt: &PropagatedPacket, t: f64, x: &[f64]) -> Result<C64> {
    let i = pkt.bundle.index_at(t)?;
    let node = PacketNode::new(&pkt.bundle, i, pkt.hbar, C64::new(1.0, 0.0))?;
    Ok(node.eval(x))
}

/// Precomputed packet: `coef * exp{(i/hbar)(p_t.(x - q_t) + (x - q_t).Z(x - q_t)/2)}`.
#[derive(Debug, Clone)]
struct PacketNode {
    qt: Vec<f64>,
    pt: Vec<f64>,
    z: Vec<C64>,
    coef: C64,
    hbar: f64,
}

impl PacketNode {
    fn new(bundle: &TrajectoryBundle, i: usize, hbar: f64, weight: C64) -> Result<Self> {
        let d = bundle.dim();
        let x0 = &bundle.points[0];
        let xt = &bundle.points[i];
        let z = bundle.z(i)?.m;
        let log = -0.25 * d as f64 * (PI * hbar).ln() - 0.5 * bundle.log_det_a[i]
            + I * (0.5 * dot(&x0.p, &x0.q) + bundle.action[i]) / hbar;
        Ok(Self {
            qt: xt.q.clone(),
            pt: xt.p.clone(),
            z: z.iter().copied().collect(),
            coef: weight * log.exp(),
            hbar,
        })
    }

    fn exponent(&self, x: &[f64]) -> C64 {
        let d = self.qt.len();
        let mut lin = 0.0;
        let mut quad = C64::new(0.0, 0.0);
        for r in 0..d {
            let dr = x[r] - self.qt[r];
            lin += self.pt[r] * dr;
            for c in 0..d {
                // nalgebra storage is column-major; Z is symmetric either way.
                quad += self.z[c * d + r] * dr * (x[c] - self.qt[c]);
            }
        }
        I * (lin + 0.5 * quad) / self.hbar
    }

    fn eval(&self, x: &[f64]) -> C64 {
        self.coef * self.exponent(x).exp()
    }
}

/// `Q(Z) = [[iI - i m, I/2 - m], [I/2 - m, i m]]` with `m = (I - iZ)^-1`.
pub fn double_anisotropy_q(z: &SiegelMatrix) -> Result<SiegelMatrix> {
    let d = z.dim();
    let id = CMatrix::identity(d, d);
    let m = linalg::inverse(&(&id - &z.m * I), "I - iZ")?;
    let half = &id * C64::new(0.5, 0.0);
    let mut q = CMatrix::zeros(2 * d, 2 * d);
    q.view_mut((0, 0), (d, d)).copy_from(&((&id - &m) * I));
    q.view_mut((0, d), (d, d)).copy_from(&(&half - &m));
    q.view_mut((d, 0), (d, d)).copy_from(&(&half - &m));
    q.view_mut((d, d), (d, d)).copy_from(&(&m * I));
    SiegelMatrix::new(q)
}

/// Integrates `dQ/dt = -H''/4 + H''JQ/2 - QJH''/2 + QJH''JQ`, `Q(0) = (i/2) I`,
/// jointly with the orbit by RK4, returning `(times, Q)`.
pub fn integrate_double_riccati(
    model: &dyn Hamiltonian,
    x0: &PhasePoint,
    t_end: f64,
    step: f64,
) -> Result<(Vec<f64>, Vec<CMatrix>)> {
    let d = model.dim();
    let n = 2 * d;
    let j = linalg::complexify(&linalg::symplectic_j(d));
    let field = |x: &[f64], q: &CMatrix| -> (Vec<f64>, CMatrix) {
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        model.gradient(&x[..d], &x[d..], &mut g);
        model.hessian(&x[..d], &x[d..], &mut h);
        let mut dx = vec![0.0; n];
        for k in 0..d {
            dx[k] = g[d + k];
            dx[d + k] = -g[k];
        }
        let hc = CMatrix::from_row_slice(n, n, &h.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());
        let hj = &hc * &j;
        let jh = &j * &hc;
        let dq = &hc * C64::new(-0.25, 0.0) + &hj * q * C64::new(0.5, 0.0) - q * &jh * C64::new(0.5, 0.0)
            + q * &jh * &j * q;
        (dx, dq)
    };
    let steps = (t_end / step - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut x = x0.stacked();
    let mut q = CMatrix::identity(n, n) * C64::new(0.0, 0.5);
    let mut times = vec![0.0];
    let mut qs = vec![q.clone()];
    let axpy = |x: &[f64], k: &[f64], s: f64| x.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    for i in 1..=steps {
        let hc = C64::new(h, 0.0);
        let (k1x, k1q) = field(&x, &q);
        let (k2x, k2q) = field(&axpy(&x, &k1x, h / 2.0), &(&q + &k1q * (hc * 0.5)));
        let (k3x, k3q) = field(&axpy(&x, &k2x, h / 2.0), &(&q + &k2q * (hc * 0.5)));
        let (k4x, k4q) = field(&axpy(&x, &k3x, h), &(&q + &k3q * hc));
        for r in 0..n {
            x[r] += h / 6.0 * (k1x[r] + 2.0 * k2x[r] + 2.0 * k3x[r] + k4x[r]);
        }
        q += (k1q + k2q * C64::new(2.0, 0.0) + k3q * C64::new(2.0, 0.0) + k4q) * (hc / 6.0);
        times.push(h * i as f64);
        qs.push(q.clone());
    }
    Ok((times, qs))
}

/// Kernel `K_sc(., Y, t)` of one base point, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct KernelNode {
    pub base: PhasePoint,
    pub target: PhasePoint,
    q: Vec<C64>,
    log_coef: C64,
    hbar: f64,
}

impl KernelNode {
    /// Builds the node from sample `i` of a bundle started at the base point.
    ///
    /// The prefactor is `(2 pi hbar)^{-d} 2^{d/2} det(A - iB)^{-1/2}`, with
    /// `log det(A - iB) = log det A + log det(I - iZ)`; the second term stays
    /// on the principal branch because `I - iZ` has its spectrum in the right
    /// half-plane.
    pub fn new(bundle: &TrajectoryBundle, i: usize, hbar: f64) -> Result<Self> {
        let d = bundle.dim();
        let y = bundle.points[0].clone();
        let yt = bundle.points[i].clone();
        let z = bundle.z(i)?;
        let id = CMatrix::identity(d, d);
        let logdet = bundle.log_det_a[i] + linalg::log_det_right_half_plane(&(&id - &z.m * I))?;
        let q = double_anisotropy_q(&z)?.m;
        let df = d as f64;
        let log_coef = -df * (2.0 * PI * hbar).ln() + 0.5 * df * 2f64.ln() - 0.5 * logdet
            + I * (bundle.action[i] + 0.5 * (dot(&y.p, &y.q) - dot(&yt.p, &yt.q))) / hbar;
        let n = 2 * d;
        let mut flat = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                flat[r * n + c] = q[(r, c)];
            }
        }
        Ok(Self { base: y, target: yt, q: flat, log_coef, hbar })
    }

    /// `log K_sc(X, Y, t)` at stacked `X = (q, p)`.
    pub fn log_value(&self, x: &[f64]) -> C64 {
        self.log_coef + self.exponent(x)
    }

    fn exponent(&self, x: &[f64]) -> C64 {
        let d = self.base.dim();
        let n = 2 * d;
        let mut symp = 0.0;
        for k in 0..d {
            symp += x[k] * self.target.p[k] - x[d + k] * self.target.q[k];
        }
        let diff = |r: usize| if r < d { x[r] - self.target.q[r] } else { x[r] - self.target.p[r - d] };
        let mut quad = C64::new(0.0, 0.0);
        for r in 0..n {
            let dr = diff(r);
            let mut row = C64::new(0.0, 0.0);
            for c in 0..n {
                row += self.q[r * n + c] * diff(c);
            }
            quad += row * dr;
        }
        I * (0.5 * symp + 0.5 * quad) / self.hbar
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        self.log_value(x).exp()
    }
}

/// Semiclassical phase space kernel `K_sc(X, Y, t)`.
pub fn kernel_ksc(
    x: &PhasePoint,
    y: &PhasePoint,
    t: f64,
    model: &dyn Hamiltonian,
    hbar: f64,
    opts: &FlowOptions,
) -> Result<C64> {
    let bundle = integrate_characteristics(model, y, t, &opts.clone().at(vec![t]))?;
    let node = KernelNode::new(&bundle, bundle.last(), hbar)?;
    Ok(node.eval(&x.stacked()))
}

#[derive(Debug, Clone)]
pub struct PropagatorOptions {
    pub flow: FlowOptions,
    /// Output grid; defaults to the flowed bounding box of the input grid.
    pub output: Option<Vec<Axis>>,
    /// Base nodes with `|Psi0| <= skip_below * max |Psi0|` are dropped.
    pub skip_below: f64,
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self { flow: FlowOptions::default(), output: None, skip_below: 1e-12 }
    }
}

impl PropagatorOptions {
    pub fn with_output(mut self, axes: Vec<Axis>) -> Self {
        self.output = Some(axes);
        self
    }
}

/// Result of a quadrature propagation.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub field: ComplexField,
    /// Ehrenfest warnings along the orbit of the dominant base node.
    pub ehrenfest: Vec<EhrenfestWarning>,
    /// Base nodes whose flow Jacobian exceeds `hbar^{-1/2}` at the final time.
    pub nodes_past_ehrenfest: usize,
    pub nodes_used: usize,
    pub nodes_skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropagationSummary {
    pub t: f64,
    pub norm: f64,
    pub nodes_used: usize,
    pub nodes_skipped: usize,
    pub nodes_past_ehrenfest: usize,
    pub ehrenfest: Vec<EhrenfestWarning>,
}

impl Propagation {
    pub fn summary(&self, t: f64) -> PropagationSummary {
        PropagationSummary {
            t,
            norm: self.field.norm(),
            nodes_used: self.nodes_used,
            nodes_skipped: self.nodes_skipped,
            nodes_past_ehrenfest: self.nodes_past_ehrenfest,
            ehrenfest: self.ehrenfest.clone(),
        }
    }
}

/// Bounding box of the images of the grid's corners and centre under the flow,
/// resolved at the finest input spacing.
pub fn transported_grid(axes: &[Axis], t: f64, model: &dyn Hamiltonian, opts: &FlowOptions) -> Result<Vec<Axis>> {
    let n = axes.len();
    let mut pts: Vec<Vec<f64>> = (0..1usize << n)
        .map(|mask| (0..n).map(|k| if mask >> k & 1 == 1 { axes[k].max } else { axes[k].min }).collect())
        .collect();
    pts.push(axes.iter().map(|a| 0.5 * (a.min + a.max)).collect());
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for x in pts {
        let b = integrate_characteristics(model, &PhasePoint::from_stacked(&x), t, &opts.clone().at(vec![t]))?;
        for (k, v) in b.points[b.last()].stacked().into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let h = axes.iter().map(|a| a.spacing()).fold(f64::INFINITY, f64::min);
    (0..n).map(|k| Axis::with_spacing(lo[k], hi[k], h)).collect()
}

fn active_nodes(field: &ComplexField, skip_below: f64) -> Vec<usize> {
    let cut = skip_below * field.max_abs();
    (0..field.len()).filter(|&k| field.values()[k].norm() > cut).collect()
}

fn ehrenfest_report(
    model: &dyn Hamiltonian,
    field: &ComplexField,
    t: f64,
    opts: &FlowOptions,
) -> Result<Vec<EhrenfestWarning>> {
    let peak = (0..field.len())
        .max_by(|&a, &b| field.values()[a].norm().total_cmp(&field.values()[b].norm()))
        .unwrap_or(0);
    let mut o = opts.clone();
    o.sampling = crate::flow::Sampling::EveryStep;
    let b = integrate_characteristics(model, &PhasePoint::from_stacked(&field.coords(peak)), t, &o)?;
    Ok(ehrenfest_guard(&b, Some(field.hbar())))
}

fn past_ehrenfest(bundle: &TrajectoryBundle, hbar: f64) -> bool {
    let m: RMatrix = bundle.frames[bundle.last()].jacobian();
    m.singular_values().iter().copied().fold(0.0, f64::max) > hbar.powf(-0.5)
}

/// `Psi(X, t) = int K_sc(X, Y, t) Psi0(Y) dY` by trapezoid quadrature over the grid of `psi0`.
pub fn apply_propagator(
    psi0: &ComplexField,
    t: f64,
    model: &dyn Hamiltonian,
    opts: &PropagatorOptions,
) -> Result<Propagation> {
    if psi0.domain() != Domain::Phase || psi0.dim() != model.dim() {
        return Err(Error::Domain("propagator input must be a phase-space field matching the model".into()));
    }
    let hbar = psi0.hbar();
    psi0.check_density_decay(crate::transform::PHASE_DECAY)?;
    check_phase_spacing(psi0.axes(), hbar)?;
    let out_axes = match &opts.output {
        Some(a) => a.clone(),
        None => transported_grid(psi0.axes(), t, model, &opts.flow)?,
    };
    let flow = opts.flow.clone().at(vec![t]);
    let active = active_nodes(psi0, opts.skip_below);
    let built: Vec<(KernelNode, bool)> = active
        .par_iter()
        .map(|&k| {
            let y = PhasePoint::from_stacked(&psi0.coords(k));
            let b = integrate_characteristics(model, &y, t, &flow)?;
            let mut node = KernelNode::new(&b, b.last(), hbar)?;
            node.log_coef += (psi0.values()[k] * psi0.weight(k)).ln();
            Ok((node, past_ehrenfest(&b, hbar)))
        })
        .collect::<Result<_>>()?;
    let nodes_past = built.iter().filter(|(_, p)| *p).count();
    let nodes: Vec<KernelNode> = built.into_iter().map(|(n, _)| n).collect();

    let out = ComplexField::zeros(out_axes.clone(), hbar, Domain::Phase)?;
    let values: Vec<C64> = (0..out.len())
        .into_par_iter()
        .map(|k| {
            let x = out.coords(k);
            let mut acc = C64::new(0.0, 0.0);
            for node in &nodes {
                let e = node.log_value(&x);
                if e.re > -700.0 {
                    acc += e.exp();
                }
            }
            acc
        })
        .collect();
    Ok(Propagation {
        field: ComplexField::new(out_axes, values, hbar, Domain::Phase)?,
        ehrenfest: ehrenfest_report(model, psi0, t, &opts.flow)?,
        nodes_past_ehrenfest: nodes_past,
        nodes_used: nodes.len(),
        nodes_skipped: psi0.len() - nodes.len(),
    })
}

/// `psi(x, t) = (2 pi hbar)^{-d/2} int G^Z_(q,p)(x, t) Psi0(q, p) dq dp`.
///
/// `position_axes` is the output grid.
pub fn position_space_solution(
    psi0: &ComplexField,
    t: f64,
    model: &dyn Hamiltonian,
    position_axes: &[Axis],
    opts: &PropagatorOptions,
) -> Result<ComplexField> {
    if psi0.domain() != Domain::Phase || psi0.dim() != model.dim() || position_axes.len() != model.dim() {
        return Err(Error::Domain("position-space solution needs phase-space data and d output axes".into()));
    }
    let hbar = psi0.hbar();
    psi0.check_density_decay(crate::transform::PHASE_DECAY)?;
    check_phase_spacing(psi0.axes(), hbar)?;
    let d = model.dim();
    let flow = opts.flow.clone().at(vec![t]);
    let active = active_nodes(psi0, opts.skip_below);
    let pre = (2.0 * PI * hbar).powf(-0.5 * d as f64);
    let nodes: Vec<PacketNode> = active
        .par_iter()
        .map(|&k| {
            let y = PhasePoint::from_stacked(&psi0.coords(k));
            let b = integrate_characteristics(model, &y, t, &flow)?;
            PacketNode::new(&b, b.last(), hbar, psi0.values()[k] * psi0.weight(k) * pre)
        })
        .collect::<Result<_>>()?;
    ComplexField::from_fn(position_axes.to_vec(), hbar, Domain::Position, |x| {
        nodes.iter().map(|n| n.eval(x)).sum()
    })
}

/// Root-search settings for [`van_vleck_kernel`].
#[derive(Debug, Clone)]
pub struct VanVleckOptions {
    pub flow: FlowOptions,
    /// Optional momentum window `(lo, hi, samples)` scanned for additional roots.
    pub p_window: Option<(f64, f64, usize)>,
    pub max_newton: usize,
}

impl Default for VanVleckOptions {
    fn default() -> Self {
        Self { flow: FlowOptions::default(), p_window: None, max_newton: 60 }
    }
}

/// One classical path contributing to the van Vleck sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VanVleckPath {
    pub p: f64,
    pub action: f64,
    /// `dq_t/dp` at the final time.
    pub stability: f64,
    /// Number of focal points passed before t.
    pub index: u32,
}

fn shoot(model: &dyn Hamiltonian, y: f64, p: f64, t: f64, flow: &FlowOptions) -> Result<(f64, f64)> {
    let b = integrate_characteristics(model, &PhasePoint::new_1d(y, p), t, &flow.clone().at(vec![t]))?;
    let i = b.last();
    Ok((b.points[i].q[0], b.frames[i].a[(0, 0)].im))
}

fn newton_root(model: &dyn Hamiltonian, x: f64, y: f64, t: f64, p0: f64, opts: &VanVleckOptions) -> Result<Option<f64>> {
    let mut p = p0;
    let (mut q, mut dq) = shoot(model, y, p, t, &opts.flow)?;
    let tol = 1e-13 * (1.0 + x.abs());
    for _ in 0..opts.max_newton {
        let f = q - x;
        if f.abs() <= tol {
            return Ok(Some(p));
        }
        if dq == 0.0 || !dq.is_finite() {
            return Ok(None);
        }
        let mut step = -f / dq;
        let mut accepted = false;
        for _ in 0..30 {
            let (qn, dqn) = shoot(model, y, p + step, t, &opts.flow)?;
            if (qn - x).abs() < f.abs() {
                p += step;
                q = qn;
                dq = dqn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(((q - x).abs() <= 1e3 * tol).then_some(p));
        }
    }
    Ok(((q - x).abs() <= 1e3 * tol).then_some(p))
}

fn classify_path(model: &dyn Hamiltonian, y: f64, p: f64, t: f64, flow: &FlowOptions) -> Result<VanVleckPath> {
    let mut o = flow.clone();
    o.sampling = crate::flow::Sampling::EveryStep;
    let b = integrate_characteristics(model, &PhasePoint::new_1d(y, p), t, &o)?;
    let stab: Vec<f64> = b.frames.iter().map(|f| f.a[(0, 0)].im).collect();
    let last = b.last();
    let scale = stab.iter().map(|s| s.abs()).fold(0.0, f64::max).max(1.0);
    // dq_t/dp vanishes at t = 0; the sign is tracked from the first nonzero sample.
    let mut index = 0;
    let mut sign = 0.0;
    let mut first_focal = None;
    for (k, &s) in stab.iter().enumerate().skip(1) {
        if s.abs() <= 1e-10 * scale {
            first_focal.get_or_insert(b.times[k]);
            continue;
        }
        if sign != 0.0 && s.signum() != sign {
            index += 1;
            first_focal.get_or_insert(b.times[k]);
        }
        sign = s.signum();
    }
    if stab[last].abs() <= 1e-10 * scale {
        return Err(Error::Caustic { t: first_focal.unwrap_or(t), alpha: None });
    }
    Ok(VanVleckPath { p, action: b.action[last], stability: stab[last], index })
}

/// Classical paths from y to x in time t (d = 1).
pub fn van_vleck_paths(
    x: f64,
    y: f64,
    t: f64,
    model: &dyn Hamiltonian,
    opts: &VanVleckOptions,
) -> Result<Vec<VanVleckPath>> {
    if model.dim() != 1 {
        return Err(Error::Domain("van Vleck reduction is implemented for d = 1".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("van Vleck kernel needs t > 0 (got {t})")));
    }
    let mut roots: Vec<f64> = Vec::new();
    let push = |p: f64, roots: &mut Vec<f64>| {
        if !roots.iter().any(|r| (r - p).abs() < 1e-8 * (1.0 + p.abs())) {
            roots.push(p);
        }
    };
    if let Some(p) = newton_root(model, x, y, t, (x - y) / (2.0 * t), opts)? {
        push(p, &mut roots);
    }
    if let Some((lo, hi, n)) = opts.p_window {
        let n = n.max(2);
        let ps: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let fs: Vec<f64> = ps.iter().map(|&p| shoot(model, y, p, t, &opts.flow).map(|r| r.0 - x)).collect::<Result<_>>()?;
        for i in 0..n - 1 {
            if fs[i] == 0.0 || fs[i].signum() != fs[i + 1].signum() {
                if let Some(p) = newton_root(model, x, y, t, 0.5 * (ps[i] + ps[i + 1]), opts)? {
                    push(p, &mut roots);
                }
            }
        }
    }
    if roots.is_empty() {
        return Err(Error::Projection(format!("no classical path from {y} to {x} in time {t}")));
    }
    roots.sort_by(f64::total_cmp);
    roots.into_iter().map(|p| classify_path(model, y, p, t, &opts.flow)).collect()
}

/// `sum_r (2 pi i hbar)^{-1/2} |dq_t/dp|^{-1/2} exp{(i/hbar) A_r - i pi nu_r / 2}` (d = 1).
pub fn van_vleck_kernel(x: f64, y: f64, t: f64, model: &dyn Hamiltonian, hbar: f64, opts: &VanVleckOptions) -> Result<C64> {
    let paths = van_vleck_paths(x, y, t, model, opts)?;
    let pre = (2.0 * PI * I * hbar).powf(-0.5);
    Ok(paths
        .iter()
        .map(|r| {
            pre * r.stability.abs().powf(-0.5)
                * C64::from_polar(1.0, r.action / hbar - PI * r.index as f64 / 2.0)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{builtin_model, polynomial_model, BuiltinKind, HamiltonianModel, Monomial};
    use crate::transform::{bergmann_kernel, gaussian_packet, overlap, wave_packet_transform};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(kind: BuiltinKind) -> HamiltonianModel {
        builtin_model(kind, 1).unwrap()
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn packet_at_zero_is_isotropic() {
        let m = model(BuiltinKind::Harmonic);
        let base = PhasePoint::new_1d(0.4, -0.7);
        let pkt = PropagatedPacket::new(&m, base.clone(), 1.0, 0.1, &FlowOptions::default()).unwrap();
        for x in [-0.5, 0.0, 0.3, 1.1] {
            let v = eval_packet(&pkt, 0.0, &[x]).unwrap();
            assert!((v - gaussian_packet(&base, 0.1, &[x])).norm() < 1e-15);
        }
        assert!(matches!(eval_packet(&pkt, 1.5, &[0.0]), Err(Error::Range { .. })));
    }

    #[test]
    fn free_packet_closed_form() {
        let (hbar, t) = (0.2, 0.7);
        let m = model(BuiltinKind::Free);
        let pkt = PropagatedPacket::new(&m, PhasePoint::new_1d(0.0, 0.0), t, hbar, &FlowOptions::default()).unwrap();
        let a = C64::new(1.0, 2.0 * t);
        for x in [-1.0, -0.2, 0.5, 1.3] {
            let want = (PI * hbar).powf(-0.25) * a.powf(-0.5) * (I / hbar * 0.5 * x * x * I / a).exp();
            assert!((eval_packet(&pkt, t, &[x]).unwrap() - want).norm() < 1e-13);
        }
    }

    #[test]
    fn packet_stays_normalized() {
        let hbar = 0.1;
        let m = model(BuiltinKind::Harmonic);
        let pkt = PropagatedPacket::new(&m, PhasePoint::new_1d(0.5, 0.2), 1.0, hbar, &FlowOptions::default()).unwrap();
        let ax = Axis::with_spacing(-5.0, 5.0, 0.005).unwrap();
        let f = ComplexField::from_fn(vec![ax], hbar, Domain::Position, |x| eval_packet(&pkt, 1.0, x).unwrap()).unwrap();
        assert_relative_eq!(f.norm(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn q_examples() {
        let q0 = double_anisotropy_q(&SiegelMatrix::new(CMatrix::identity(2, 2) * I).unwrap()).unwrap();
        assert!(linalg::max_abs(&(q0.m - CMatrix::identity(4, 4) * C64::new(0.0, 0.5))) < 1e-15);
        let z = I / C64::new(1.0, 2.0);
        let q = double_anisotropy_q(&SiegelMatrix::new(CMatrix::from_element(1, 1, z)).unwrap()).unwrap();
        let c = I / (2.0 * C64::new(1.0, 1.0));
        let want = [c, -c, -c, c * C64::new(1.0, 2.0)];
        for (k, w) in want.iter().enumerate() {
            assert!((q.m[(k / 2, k % 2)] - w).norm() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn q_is_siegel(re in -3.0..3.0f64, im in 0.01..5.0f64) {
            let z = SiegelMatrix::new(CMatrix::from_element(1, 1, C64::new(re, im))).unwrap();
            let q = double_anisotropy_q(&z);
            prop_assert!(q.is_ok());
        }
    }

    #[test]
    fn double_riccati_matches_q_of_z() {
        let m = polynomial_model(&[Monomial::new(0, 2, 1.0), Monomial::new(4, 0, 1.0), Monomial::new(1, 1, 0.3)]).unwrap();
        let x0 = PhasePoint::new_1d(0.6, -0.4);
        let (times, qs) = integrate_double_riccati(&m, &x0, 1.0, 1e-3).unwrap();
        let b = integrate_characteristics(&m, &x0, 1.0, &FlowOptions::default().at(times[1..].to_vec())).unwrap();
        let mut worst = 0.0f64;
        for (i, q) in qs.iter().enumerate().step_by(50) {
            let want = double_anisotropy_q(&b.z(i).unwrap()).unwrap().m;
            worst = worst.max(linalg::max_abs(&(q - want)));
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn kernel_at_zero_is_bergmann() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in BuiltinKind::ALL {
            for _ in 0..10 {
                let x = PhasePoint::new_1d(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let y = PhasePoint::new_1d(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let k = kernel_ksc(&x, &y, 0.0, &model(kind), 0.3, &FlowOptions::default()).unwrap();
                assert!((k - bergmann_kernel(&x, &y, 0.3)).norm() < 1e-12);
                let kt = kernel_ksc(&y, &x, 0.0, &model(kind), 0.3, &FlowOptions::default()).unwrap();
                assert!((k - kt.conj()).norm() < 1e-12);
            }
        }
    }

    // <G_X, G^Z_Y(t)> / (2 pi hbar)^d by quadrature over x.
    fn kernel_by_quadrature(kind: BuiltinKind, x: &PhasePoint, y: &PhasePoint, t: f64, hbar: f64) -> C64 {
        let pkt = PropagatedPacket::new(&model(kind), y.clone(), t, hbar, &FlowOptions::default()).unwrap();
        let ax = Axis::with_spacing(-12.0, 12.0, 0.002).unwrap();
        let s: C64 = ax
            .points()
            .iter()
            .enumerate()
            .map(|(i, &u)| gaussian_packet(x, hbar, &[u]).conj() * eval_packet(&pkt, t, &[u]).unwrap() * ax.weight(i))
            .sum();
        s / (2.0 * PI * hbar)
    }

    #[test]
    fn kernel_matches_packet_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in BuiltinKind::ALL {
            for _ in 0..4 {
                let x = PhasePoint::new_1d(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let y = PhasePoint::new_1d(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let t = rng.random_range(0.1..1.0);
                let b = integrate_characteristics(&model(kind), &y, t, &FlowOptions::default().at(vec![t])).unwrap();
                let xt = &b.points[b.last()];
                // Evaluate near the transported centre so the kernel is not exponentially small.
                let x = PhasePoint::new_1d(xt.q[0] + 0.3 * x.q[0], xt.p[0] + 0.3 * x.p[0]);
                let k = kernel_ksc(&x, &y, t, &model(kind), 0.5, &FlowOptions::default()).unwrap();
                let want = kernel_by_quadrature(kind, &x, &y, t, 0.5);
                assert!(rel(k, want) < 1e-9, "{kind} {}", rel(k, want));
            }
        }
    }

    #[test]
    fn kernel_prefactor_matches_wirtinger_determinant() {
        // d(eta_t - i xi_t)/d(eta - i xi) by finite differences of a non-quadratic flow.
        let m = polynomial_model(&[Monomial::new(0, 2, 1.0), Monomial::new(4, 0, 0.5)]).unwrap();
        let (y, t, h) = (PhasePoint::new_1d(0.4, 0.3), 0.8, 1e-5);
        let end = |q: f64, p: f64| {
            let b = integrate_characteristics(&m, &PhasePoint::new_1d(q, p), t, &FlowOptions::default().at(vec![t])).unwrap();
            let x = &b.points[b.last()];
            C64::new(x.q[0], -x.p[0])
        };
        let deta = (end(y.q[0] + h, y.p[0]) - end(y.q[0] - h, y.p[0])) / (2.0 * h);
        let dxi = (end(y.q[0], y.p[0] + h) - end(y.q[0], y.p[0] - h)) / (2.0 * h);
        let wirtinger = 0.5 * (deta + I * dxi);
        let b = integrate_characteristics(&m, &y, t, &FlowOptions::default().at(vec![t])).unwrap();
        let f = &b.frames[b.last()];
        let a_ib = f.a[(0, 0)] - I * f.b[(0, 0)];
        assert!((wirtinger - 0.5 * a_ib).norm() < 1e-8);
    }

    fn packet_phase_field(center: &PhasePoint, hbar: f64, half: f64, h: f64) -> ComplexField {
        let ax = Axis::with_spacing(-half, half, h).unwrap();
        ComplexField::from_fn(vec![ax, ax], hbar, Domain::Phase, |x| {
            overlap(&PhasePoint::from_stacked(x), center, hbar) * (2.0 * PI * hbar).powf(-0.5)
        })
        .unwrap()
    }

    #[test]
    fn zero_time_propagation_reproduces_transformed_data() {
        let hbar = 0.1;
        let psi0 = packet_phase_field(&PhasePoint::new_1d(0.3, -0.2), hbar, 3.5, 0.1);
        let opts = PropagatorOptions::default().with_output(psi0.axes().to_vec());
        let out = apply_propagator(&psi0, 0.0, &model(BuiltinKind::Free), &opts).unwrap();
        let err = out.field.values().iter().zip(psi0.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-5 * psi0.max_abs(), "{err}");
    }

    #[test]
    fn coherent_state_follows_exact_transform() {
        // A coherent state under a quadratic flow stays Gaussian; compare with the
        // transform of the analytically propagated packet.
        let (hbar, t) = (0.1, 0.6);
        let c = PhasePoint::new_1d(0.4, 0.5);
        let m = model(BuiltinKind::Harmonic);
        let psi0 = packet_phase_field(&c, hbar, 4.0, 0.1);
        let opts = PropagatorOptions::default().with_output(psi0.axes().to_vec());
        let out = apply_propagator(&psi0, t, &m, &opts).unwrap();
        let pkt = PropagatedPacket::new(&m, c, t, hbar, &FlowOptions::default()).unwrap();
        let pos = ComplexField::from_fn(vec![Axis::with_spacing(-6.0, 6.0, 0.005).unwrap()], hbar, Domain::Position, |x| {
            eval_packet(&pkt, t, x).unwrap()
        })
        .unwrap();
        let want = wave_packet_transform(&pos, psi0.axes()).unwrap();
        let err = out.field.values().iter().zip(want.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6 * want.max_abs(), "{err}");
        assert_relative_eq!(out.field.norm(), 1.0, epsilon = 1e-6);
        assert!(out.ehrenfest.is_empty());
    }

    #[test]
    fn transported_grid_covers_sheared_box() {
        let ax = Axis::new(-1.0, 1.0, 21).unwrap();
        let g = transported_grid(&[ax, ax], 1.0, &model(BuiltinKind::Free), &FlowOptions::default()).unwrap();
        assert_relative_eq!(g[0].min, -3.0, epsilon = 1e-12);
        assert_relative_eq!(g[0].max, 3.0, epsilon = 1e-12);
        assert_relative_eq!(g[1].max, 1.0, epsilon = 1e-12);
        assert!(g[0].spacing() <= ax.spacing() + 1e-12);
    }

    #[test]
    fn free_van_vleck_matches_propagator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hbar = 0.1;
        for _ in 0..10 {
            let (x, y, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.1..1.5));
            let k = van_vleck_kernel(x, y, t, &model(BuiltinKind::Free), hbar, &VanVleckOptions::default()).unwrap();
            let want = (4.0 * PI * I * hbar * t).powf(-0.5) * (I * (x - y) * (x - y) / (4.0 * hbar * t)).exp();
            assert!(rel(k, want) < 1e-9);
        }
    }

    fn mehler(x: f64, y: f64, t: f64, hbar: f64) -> C64 {
        let (c, s) = ((2.0 * t).cos(), (2.0 * t).sin());
        (2.0 * PI * I * hbar * s).powf(-0.5) * (I / (2.0 * hbar * s) * ((x * x + y * y) * c - 2.0 * x * y)).exp()
    }

    #[test]
    fn harmonic_van_vleck_and_focal_points() {
        let hbar = 0.1;
        let m = model(BuiltinKind::Harmonic);
        let o = VanVleckOptions::default();
        for (x, y, t) in [(0.3, -0.4, 0.4), (1.0, 0.5, 1.2), (-0.7, 0.2, 0.05)] {
            let k = van_vleck_kernel(x, y, t, &m, hbar, &o).unwrap();
            assert!(rel(k, mehler(x, y, t, hbar)) < 1e-9);
        }
        // Past the first focal point the index adds a quarter-period phase.
        let (x, y, t) = (0.3, -0.2, 2.0);
        let k = van_vleck_kernel(x, y, t, &m, hbar, &o).unwrap();
        let s = (2.0 * t).sin();
        let want = (2.0 * PI * I * hbar).powf(-0.5) * s.abs().powf(-0.5) * C64::from_polar(1.0, -PI / 2.0)
            * (I / (2.0 * hbar * s) * ((x * x + y * y) * (2.0 * t).cos() - 2.0 * x * y)).exp();
        assert!(rel(k, want) < 1e-9);
        match van_vleck_kernel(0.0, 0.5, PI / 2.0, &m, hbar, &o) {
            Err(Error::Caustic { t, .. }) => assert!((t - PI / 2.0).abs() < 2e-3),
            other => panic!("expected caustic, got {other:?}"),
        }
    }

    #[test]
    fn short_time_growth() {
        let m = model(BuiltinKind::Free);
        let k1 = van_vleck_kernel(0.5, 0.0, 1e-2, &m, 0.1, &VanVleckOptions::default()).unwrap().norm();
        let k2 = van_vleck_kernel(0.5, 0.0, 2.5e-3, &m, 0.1, &VanVleckOptions::default()).unwrap().norm();
        assert_relative_eq!(k2 / k1, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn scan_finds_multiple_paths() {
        // Quartic oscillator: several momenta reach the same point in a long time.
        let m = polynomial_model(&[Monomial::new(0, 2, 1.0), Monomial::new(4, 0, 1.0)]).unwrap();
        let o = VanVleckOptions { p_window: Some((-4.0, 4.0, 161)), ..Default::default() };
        let paths = van_vleck_paths(0.2, 0.0, 3.0, &m, &o).unwrap();
        assert!(paths.len() >= 2, "{paths:?}");
        for r in &paths {
            let (q, _) = shoot(&m, 0.0, r.p, 3.0, &o.flow).unwrap();
            assert!((q - 0.2).abs() < 1e-10);
        }
    }
}
