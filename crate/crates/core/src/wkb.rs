//! WKB data in phase space (d = 1): lifting through the complex stationary
//! point, transport of the Lagrangian manifold, the double phase space phase
//! `F_sc`, and the leading-order solution along the transported manifold.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Axis, ComplexField, Domain};
use crate::flow::{integrate_characteristics, FlowOptions, Sampling, TrajectoryBundle};
use crate::linalg::{self, CMatrix, C64, I};
use crate::models::{Hamiltonian, PhasePoint};
use crate::propagator::double_anisotropy_q;

/// Real polynomial, coefficients in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("polynomial coefficients must be finite".into()));
        }
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Ok(Self { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let c: Vec<f64> = self.coeffs.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect();
        Polynomial { coeffs: if c.is_empty() { vec![0.0] } else { c } }
    }

    fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        Polynomial { coeffs: (0..n).map(|k| get(&self.coeffs, k) + get(&other.coeffs, k)).collect() }
    }

    fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut c = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial { coeffs: c }
    }
}

/// Functions that supply exact derivatives `f, f', ..., f^(upto)` at a point.
pub trait DerivativeStack {
    fn derivatives(&self, x: f64, upto: usize) -> Vec<f64>;
}

impl DerivativeStack for Polynomial {
    fn derivatives(&self, x: f64, upto: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(upto + 1);
        let mut p = self.clone();
        for _ in 0..=upto {
            out.push(p.eval(x));
            p = p.derivative();
        }
        out
    }
}

/// `poly(x) * exp(exponent(x))` with `exponent` of degree at most 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussPoly {
    pub poly: Polynomial,
    pub exponent: Polynomial,
}

impl GaussPoly {
    pub fn new(poly: Polynomial, exponent: Polynomial) -> Result<Self> {
        if exponent.degree() > 2 {
            return Err(Error::Config("amplitude exponent must have degree at most 2".into()));
        }
        if exponent.degree() < 2 || exponent.coeffs[2] >= 0.0 {
            return Err(Error::Config("amplitude must decay: exponent needs a negative x^2 coefficient".into()));
        }
        Ok(Self { poly, exponent })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.poly.eval(x) * self.exponent.eval(x).exp()
    }

    /// Centre and width of the Gaussian envelope.
    pub fn envelope(&self) -> (f64, f64) {
        let a = -self.exponent.coeffs[2];
        let b = self.exponent.coeffs.get(1).copied().unwrap_or(0.0);
        (b / (2.0 * a), (0.5 / a).sqrt())
    }
}

impl DerivativeStack for GaussPoly {
    // f^(m) = u_m e^g with u_0 = poly, u_{m+1} = u_m' + u_m g'.
    fn derivatives(&self, x: f64, upto: usize) -> Vec<f64> {
        let g1 = self.exponent.derivative();
        let e = self.exponent.eval(x).exp();
        let mut u = self.poly.clone();
        let mut out = Vec::with_capacity(upto + 1);
        for _ in 0..=upto {
            out.push(u.eval(x) * e);
            u = u.derivative().add(&u.mul(&g1));
        }
        out
    }
}

/// `sum_{m <= r} (iy)^m / m! f^(m)(x)` at `z = x + iy`.
pub fn r_analytic_extension(f: &dyn DerivativeStack, r: usize, z: C64) -> C64 {
    let ds = f.derivatives(z.re, r);
    let mut term = C64::new(1.0, 0.0);
    let mut acc = C64::new(0.0, 0.0);
    for (m, d) in ds.iter().enumerate() {
        if m > 0 {
            term *= I * z.im / m as f64;
        }
        acc += term * d;
    }
    acc
}

/// Offset stack `x -> f^(k + m)(x)`, used to extend derivatives of a phase.
struct Shifted<'a, F: DerivativeStack + ?Sized> {
    f: &'a F,
    k: usize,
}

impl<F: DerivativeStack + ?Sized> DerivativeStack for Shifted<'_, F> {
    fn derivatives(&self, x: f64, upto: usize) -> Vec<f64> {
        self.f.derivatives(x, upto + self.k).split_off(self.k)
    }
}

/// WKB initial data `psi0(x) = R0(x) exp(i S0(x) / hbar)` in one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WkbData {
    pub s0: Polynomial,
    pub r0: GaussPoly,
    /// Order of the analytic extensions.
    #[serde(default = "default_order")]
    pub r: usize,
}

fn default_order() -> usize {
    2
}

impl WkbData {
    pub fn new(s0: Polynomial, r0: GaussPoly, r: usize) -> Result<Self> {
        if r < 2 {
            return Err(Error::Config(format!("wkb.r: extension order must be at least 2 (got {r})")));
        }
        if s0.degree() > 4 || r0.poly.degree() > 4 {
            return Err(Error::Config("wkb: phase and amplitude polynomials are limited to degree 4".into()));
        }
        let data = Self { s0, r0, r };
        let (c, w) = data.r0.envelope();
        let ax = Axis::with_spacing(c - 40.0 * w, c + 40.0 * w, w / 50.0)?;
        let mass: f64 = (0..ax.n).map(|i| data.r0.eval(ax.point(i)).powi(2) * ax.weight(i)).sum();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::Config(format!("wkb.r0: amplitude must be L2-normalized (mass {mass:.10})")));
        }
        let peak = (0..ax.n).map(|i| data.r0.eval(ax.point(i)).abs()).fold(0.0, f64::max);
        let s2 = data.s0.derivative().derivative();
        let support: Vec<f64> = ax.points().into_iter().filter(|&x| data.r0.eval(x).abs() > 1e-8 * peak).collect();
        for (k, &x) in support.iter().enumerate() {
            let v = s2.eval(x);
            let flips = k > 0 && v * s2.eval(support[k - 1]) <= 0.0;
            if v.abs() < 1e-12 || flips {
                return Err(Error::Config(format!("wkb.s0: S0'' vanishes near x = {x} inside the support")));
            }
        }
        Ok(data)
    }

    /// `S0 = x^2/2`, `R0 = pi^{-1/4} e^{-x^2/2}`.
    pub fn unit_chirp() -> Self {
        Self::new(
            Polynomial::new(vec![0.0, 0.0, 0.5]).unwrap(),
            GaussPoly::new(Polynomial::new(vec![PI.powf(-0.25)]).unwrap(), Polynomial::new(vec![0.0, 0.0, -0.5]).unwrap())
                .unwrap(),
            2,
        )
        .expect("reference data is valid")
    }

    pub fn with_order(mut self, r: usize) -> Result<Self> {
        if r < 2 {
            return Err(Error::Config(format!("wkb.r: extension order must be at least 2 (got {r})")));
        }
        self.r = r;
        Ok(self)
    }

    pub fn psi0(&self, x: f64, hbar: f64) -> C64 {
        C64::from_polar(self.r0.eval(x), self.s0.eval(x) / hbar)
    }

    pub fn position_field(&self, axis: Axis, hbar: f64) -> Result<ComplexField> {
        ComplexField::from_fn(vec![axis], hbar, Domain::Position, |x| self.psi0(x[0], hbar))
    }

    fn ds0(&self, x: f64) -> (f64, f64, f64) {
        let d = self.s0.derivatives(x, 2);
        (d[0], d[1], d[2])
    }
}

/// `z(q, p) = q + i (S0'(q) - p) / (1 - i S0''(q))`.
pub fn stationary_point_z(data: &WkbData, x: &PhasePoint) -> C64 {
    let (q, p) = (x.q[0], x.p[0]);
    let (_, s1, s2) = data.ds0(q);
    q + I * (s1 - p) / C64::new(1.0, -s2)
}

fn lift_parts(data: &WkbData, q: f64, p: f64, hbar: f64) -> (C64, C64) {
    let z = stationary_point_z(data, &PhasePoint::new_1d(q, p));
    let r = data.r;
    let s = r_analytic_extension(&data.s0, r, z);
    let amp = r_analytic_extension(&data.r0, r, z);
    let s2 = r_analytic_extension(&Shifted { f: &data.s0, k: 2 }, r - 2, z);
    let det = C64::new(1.0, 0.0) - I * s2;
    let dz = z - q;
    let phase = s - p * dz + 0.5 * I * dz * dz - 0.5 * p * q;
    let val = (PI * hbar).powf(-0.25) * amp / det.sqrt() * (I * phase / hbar).exp();
    (val, det)
}

/// Lifts WKB data to phase space through the complex stationary point.
///
/// `Psi0(q, p) = (pi hbar)^{-1/4} R(z) / sqrt(1 - i S''(z)) exp{(i/hbar)(S(z) - p(z - q) + (i/2)(z - q)^2 - pq/2)}`
/// with `R`, `S` and `S''` extended to order r (S'' to order r - 2).
pub fn lift_wkb(data: &WkbData, phase_axes: &[Axis], hbar: f64) -> Result<ComplexField> {
    if phase_axes.len() != 2 {
        return Err(Error::Domain("WKB lifting is implemented for d = 1".into()));
    }
    let axes = phase_axes.to_vec();
    let len = axes[0].n * axes[1].n;
    let parts: Vec<(C64, C64)> = (0..len)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / axes[1].n, k % axes[1].n);
            lift_parts(data, axes[0].point(i), axes[1].point(j), hbar)
        })
        .collect();
    // The principal square root must not jump between neighbouring nodes.
    let n1 = axes[1].n;
    for k in 0..len {
        let neighbours = [(k % n1 + 1 < n1).then_some(k + 1), (k + n1 < len).then_some(k + n1)];
        for l in neighbours.into_iter().flatten() {
            let (a, b) = (parts[k].1.arg(), parts[l].1.arg());
            if (a - b).abs() > PI {
                return Err(Error::Branch { a: k, b: l });
            }
        }
    }
    ComplexField::new(axes, parts.into_iter().map(|p| p.0).collect(), hbar, Domain::Phase)
}

/// Samples of the transported Lagrangian manifold and its generating phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianManifold {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// `S(q(alpha), t) = S0(alpha) + action(alpha, t)`.
    pub phase: Vec<f64>,
    /// `dq_t / d alpha`.
    pub dq_dalpha: Vec<f64>,
}

/// Least-squares line `p = slope q + offset` through the manifold samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub offset: f64,
    pub max_residual: f64,
}

impl LagrangianManifold {
    pub fn fit_line(&self) -> Result<LineFit> {
        let n = self.q.len() as f64;
        let (mq, mp) = (self.q.iter().sum::<f64>() / n, self.p.iter().sum::<f64>() / n);
        let sqq: f64 = self.q.iter().map(|q| (q - mq).powi(2)).sum();
        let sqp: f64 = self.q.iter().zip(&self.p).map(|(q, p)| (q - mq) * (p - mp)).sum();
        if sqq <= 1e-24 * n {
            return Err(Error::Caustic { t: self.t, alpha: None });
        }
        let slope = sqp / sqq;
        let offset = mp - slope * mq;
        let max_residual =
            self.q.iter().zip(&self.p).map(|(q, p)| (p - slope * q - offset).abs()).fold(0.0, f64::max);
        Ok(LineFit { slope, offset, max_residual })
    }
}

fn check_dim(model: &dyn Hamiltonian) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::Domain("WKB transport is implemented for d = 1".into()));
    }
    Ok(())
}

fn manifold_point(data: &WkbData, alpha: f64) -> PhasePoint {
    PhasePoint::new_1d(alpha, data.s0.derivatives(alpha, 1)[1])
}

/// `dq_t/d alpha = Re A + Im A S0''(alpha)` at sample i.
fn stretch(data: &WkbData, b: &TrajectoryBundle, i: usize, alpha: f64) -> f64 {
    let a = b.frames[i].a[(0, 0)];
    a.re + a.im * data.ds0(alpha).2
}

/// Transports the initial manifold `p = S0'(q)` to time t.
///
/// Fails with a caustic error at the earliest sampled time where `dq/d alpha`
/// stops being positive for some alpha.
pub fn transport_manifold(
    data: &WkbData,
    model: &dyn Hamiltonian,
    t: f64,
    alpha: &Axis,
    flow: &FlowOptions,
) -> Result<LagrangianManifold> {
    check_dim(model)?;
    let mut o = flow.clone();
    o.sampling = Sampling::EveryStep;
    let alphas = alpha.points();
    let rows: Vec<(f64, f64, f64, f64, Option<f64>)> = alphas
        .par_iter()
        .map(|&a| {
            let b = integrate_characteristics(model, &manifold_point(data, a), t, &o)?;
            let first_bad = (1..b.len()).find(|&i| stretch(data, &b, i, a) <= 0.0).map(|i| b.times[i]);
            let last = b.last();
            let x = &b.points[last];
            Ok((x.q[0], x.p[0], data.s0.eval(a) + b.action[last], stretch(data, &b, last, a), first_bad))
        })
        .collect::<Result<_>>()?;
    let caustic = rows
        .iter()
        .zip(&alphas)
        .filter_map(|(r, &a)| r.4.map(|tc| (tc, a)))
        .min_by(|x, y| x.0.total_cmp(&y.0));
    if let Some((tc, a)) = caustic {
        return Err(Error::Caustic { t: tc, alpha: Some(a) });
    }
    Ok(LagrangianManifold {
        t,
        alpha: alphas,
        q: rows.iter().map(|r| r.0).collect(),
        p: rows.iter().map(|r| r.1).collect(),
        phase: rows.iter().map(|r| r.2).collect(),
        dq_dalpha: rows.iter().map(|r| r.3).collect(),
    })
}

/// Earliest time in `(0, t_max]` at which `dq_t/d alpha` vanishes for one of the
/// given alphas, refined by bisection; `None` if the manifold stays a graph.
pub fn caustic_time(
    data: &WkbData,
    model: &dyn Hamiltonian,
    alphas: &[f64],
    t_max: f64,
    flow: &FlowOptions,
) -> Result<Option<(f64, f64)>> {
    check_dim(model)?;
    let mut o = flow.clone();
    o.sampling = Sampling::EveryStep;
    let mut best: Option<(f64, f64, f64)> = None;
    for &a in alphas {
        let b = integrate_characteristics(model, &manifold_point(data, a), t_max, &o)?;
        if let Some(i) = (1..b.len()).find(|&i| stretch(data, &b, i, a) <= 0.0) {
            if best.map_or(true, |(tc, _, _)| b.times[i] < tc) {
                best = Some((b.times[i], b.times[i - 1], a));
            }
        }
    }
    let Some((mut hi, mut lo, a)) = best else { return Ok(None) };
    let at = |tau: f64| -> Result<f64> {
        let b = integrate_characteristics(model, &manifold_point(data, a), tau, &flow.clone().at(vec![tau]))?;
        Ok(stretch(data, &b, b.last(), a))
    };
    while hi - lo > 1e-13 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some((0.5 * (lo + hi), a)))
}

/// Transported phase and momentum at position x: `S(x, t)` and `dS/dx`.
pub fn transported_phase(
    data: &WkbData,
    model: &dyn Hamiltonian,
    x: f64,
    t: f64,
    flow: &FlowOptions,
) -> Result<(f64, f64)> {
    check_dim(model)?;
    let f = flow.clone().at(vec![t]);
    let mut a = x;
    for _ in 0..100 {
        let b = integrate_characteristics(model, &manifold_point(data, a), t, &f)?;
        let i = b.last();
        let r = b.points[i].q[0] - x;
        let j = stretch(data, &b, i, a);
        if r.abs() <= 1e-13 * (1.0 + x.abs()) {
            return Ok((data.s0.eval(a) + b.action[i], b.points[i].p[0]));
        }
        if j <= 0.0 {
            return Err(Error::Caustic { t, alpha: Some(a) });
        }
        a -= r / j;
    }
    Err(Error::Projection(format!("no characteristic reaches x = {x} at t = {t}")))
}

struct OrbitEnd {
    x0: PhasePoint,
    xt: PhasePoint,
    tangent: [f64; 2],
    bundle: TrajectoryBundle,
}

fn orbit_end(data: &WkbData, model: &dyn Hamiltonian, alpha: f64, t: f64, flow: &FlowOptions) -> Result<OrbitEnd> {
    let x0 = manifold_point(data, alpha);
    let bundle = integrate_characteristics(model, &x0, t, &flow.clone().at(vec![t]))?;
    let i = bundle.last();
    let m = bundle.frames[i].jacobian();
    let s2 = data.ds0(alpha).2;
    let tangent = [m[(0, 0)] + m[(0, 1)] * s2, m[(1, 0)] + m[(1, 1)] * s2];
    let xt = bundle.points[i].clone();
    Ok(OrbitEnd { x0, xt, tangent, bundle })
}

/// Nearest point of the transported manifold to X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    pub alpha: f64,
    pub distance: f64,
    /// Another local minimum of the distance lies within 1e-9 of this one.
    pub ambiguous: bool,
}

/// Solves `(X - X_t(alpha)) . dX_t/d alpha = 0` by damped Newton from the nearest sample of `manifold`.
pub fn project_onto_manifold(
    x: &PhasePoint,
    manifold: &LagrangianManifold,
    data: &WkbData,
    model: &dyn Hamiltonian,
    flow: &FlowOptions,
) -> Result<Projection> {
    check_dim(model)?;
    let t = manifold.t;
    let dist2 = |k: usize| (manifold.q[k] - x.q[0]).powi(2) + (manifold.p[k] - x.p[0]).powi(2);
    let n = manifold.alpha.len();
    let minima: Vec<usize> = (0..n)
        .filter(|&k| (k == 0 || dist2(k) <= dist2(k - 1)) && (k + 1 == n || dist2(k) <= dist2(k + 1)))
        .collect();
    let seed = *minima
        .iter()
        .min_by(|&&a, &&b| dist2(a).total_cmp(&dist2(b)))
        .ok_or_else(|| Error::Projection("empty manifold".into()))?;

    let grad = |a: f64| -> Result<(f64, f64)> {
        let e = orbit_end(data, model, a, t, flow)?;
        let d = [x.q[0] - e.xt.q[0], x.p[0] - e.xt.p[0]];
        Ok((-(d[0] * e.tangent[0] + d[1] * e.tangent[1]), 0.5 * (d[0] * d[0] + d[1] * d[1])))
    };
    let refine = |a0: f64| -> Result<(f64, f64)> {
        let mut a = a0;
        let (mut g, mut f) = grad(a)?;
        let h = 1e-6 * (1.0 + a.abs());
        for _ in 0..60 {
            let gp = (grad(a + h)?.0 - grad(a - h)?.0) / (2.0 * h);
            let mut step = if gp > 0.0 { -g / gp } else { -g.signum() * h * 1e3 };
            let mut moved = false;
            for _ in 0..40 {
                let (gn, fnew) = grad(a + step)?;
                if fnew <= f || gn.abs() < g.abs() {
                    a += step;
                    g = gn;
                    f = fnew;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved || step.abs() < 1e-15 * (1.0 + a.abs()) {
                break;
            }
        }
        if !g.is_finite() {
            return Err(Error::Projection(format!("Newton diverged near alpha = {a0}")));
        }
        Ok((a, (2.0 * f).sqrt()))
    };
    let (alpha, distance) = refine(manifold.alpha[seed])?;
    let mut ambiguous = false;
    for &k in &minima {
        if k != seed && (dist2(k).sqrt() - dist2(seed).sqrt()).abs() < 0.1 {
            let (a2, d2) = refine(manifold.alpha[k])?;
            if (a2 - alpha).abs() > 1e-6 && (d2 - distance).abs() <= 1e-9 * (1.0 + distance) {
                ambiguous = true;
            }
        }
    }
    Ok(Projection { alpha, distance, ambiguous })
}

/// Value of the double phase space phase with the projection that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fsc {
    pub value: C64,
    pub alpha: f64,
    pub ambiguous: bool,
}

/// Asymptotic double phase space phase `F_sc(X, Y, t)` for `Y` on the initial manifold.
///
/// `F = S0(eta) - xi eta/2 + X0.JY/2 + X.JX_t/2 + A - (p_t q_t - p_0 q_0)/2
///      + (i/4)|X0 - Y|^2 + (X - X_t).Q(X - X_t)/2`, where `X0 = X0(alpha)` and
/// `alpha` is the nearest-point projection of X onto the transported manifold.
pub fn asymptotic_phase_fsc(
    x: &PhasePoint,
    y: &PhasePoint,
    manifold: &LagrangianManifold,
    data: &WkbData,
    model: &dyn Hamiltonian,
    flow: &FlowOptions,
) -> Result<Fsc> {
    let (eta, xi) = (y.q[0], y.p[0]);
    let (s0, s1, _) = data.ds0(eta);
    if (xi - s1).abs() > 1e-10 * (1.0 + s1.abs()) {
        return Err(Error::Domain(format!("Y = ({eta}, {xi}) is not on the initial manifold")));
    }
    let proj = project_onto_manifold(x, manifold, data, model, flow)?;
    let e = orbit_end(data, model, proj.alpha, manifold.t, flow)?;
    let i = e.bundle.last();
    let q = double_anisotropy_q(&e.bundle.z(i)?)?.m;
    let d = [x.q[0] - e.xt.q[0], x.p[0] - e.xt.p[0]];
    let mut quad = C64::new(0.0, 0.0);
    for r in 0..2 {
        for c in 0..2 {
            quad += q[(r, c)] * d[r] * d[c];
        }
    }
    let real = s0 - 0.5 * xi * eta
        + 0.5 * e.x0.symplectic_dot(y)
        + 0.5 * x.symplectic_dot(&e.xt)
        + e.bundle.action[i]
        - 0.5 * (e.xt.p[0] * e.xt.q[0] - e.x0.p[0] * e.x0.q[0]);
    let value = real + 0.25 * I * e.x0.distance2(y) + 0.5 * quad;
    Ok(Fsc { value, alpha: proj.alpha, ambiguous: proj.ambiguous })
}

/// Phase of `K_sc(X, Y, t) Psi0(Y)` as a function of Y (lifted data, kernel exponent).
fn integrand_phase(data: &WkbData, model: &dyn Hamiltonian, x: &PhasePoint, y: &PhasePoint, t: f64, flow: &FlowOptions) -> Result<C64> {
    let z = stationary_point_z(data, y);
    let (eta, xi) = (y.q[0], y.p[0]);
    let s = r_analytic_extension(&data.s0, data.r, z);
    let b = integrate_characteristics(model, y, t, &flow.clone().at(vec![t]))?;
    let i = b.last();
    let yt = &b.points[i];
    let q = double_anisotropy_q(&b.z(i)?)?.m;
    let d = [x.q[0] - yt.q[0], x.p[0] - yt.p[0]];
    let mut quad = C64::new(0.0, 0.0);
    for r in 0..2 {
        for c in 0..2 {
            quad += q[(r, c)] * d[r] * d[c];
        }
    }
    Ok(s - xi * (z - eta) + 0.5 * I * (z - eta) * (z - eta) + b.action[i] - 0.5 * yt.p[0] * yt.q[0]
        + 0.5 * x.symplectic_dot(yt)
        + 0.5 * quad)
}

/// Leading-order solution at a point X of the transported manifold.
///
/// Stationary phase of `int K_sc(X, Y, t) Psi0(Y) dY` at `Y = X0(alpha)`:
/// `(pi hbar)^{-1/4} sqrt(2 / det(A - iB)) R0(eta) / sqrt(1 - i S0''(eta))
///  exp{(i/hbar)(-pq/2 + S0(eta) + A)} / sqrt(det(-i F''))`,
/// with the Hessian `F''` in Y taken by central differences.
pub fn solution_on_manifold(
    x: &PhasePoint,
    manifold: &LagrangianManifold,
    data: &WkbData,
    model: &dyn Hamiltonian,
    hbar: f64,
    flow: &FlowOptions,
) -> Result<C64> {
    let proj = project_onto_manifold(x, manifold, data, model, flow)?;
    if proj.distance > 1e-8 * (1.0 + x.q[0].abs() + x.p[0].abs()) {
        return Err(Error::Projection(format!(
            "point lies {:.3e} away from the transported manifold",
            proj.distance
        )));
    }
    let t = manifold.t;
    let e = orbit_end(data, model, proj.alpha, t, flow)?;
    let i = e.bundle.last();
    let z = e.bundle.z(i)?;
    let id = CMatrix::identity(1, 1);
    let logdet = e.bundle.log_det_a[i] + linalg::log_det_right_half_plane(&(&id - &z.m * I))?;

    let h = 1e-3;
    let y0 = e.x0.clone();
    let phase = |dq: f64, dp: f64| integrand_phase(data, model, x, &PhasePoint::new_1d(y0.q[0] + dq, y0.p[0] + dp), t, flow);
    let f0 = phase(0.0, 0.0)?;
    let fqq = (phase(h, 0.0)? - 2.0 * f0 + phase(-h, 0.0)?) / (h * h);
    let fpp = (phase(0.0, h)? - 2.0 * f0 + phase(0.0, -h)?) / (h * h);
    let fqp = (phase(h, h)? - phase(h, -h)? - phase(-h, h)? + phase(-h, -h)?) / (4.0 * h * h);
    let hess_det = -(fqq * fpp - fqp * fqp);

    let (eta, _) = (y0.q[0], y0.p[0]);
    let (s0, _, s2) = data.ds0(eta);
    let amp = data.r0.eval(eta) / C64::new(1.0, -s2).sqrt();
    let pre = (PI * hbar).powf(-0.25) * (0.5 * 2f64.ln() - 0.5 * logdet).exp();
    let (q, p) = (x.q[0], x.p[0]);
    let ph = -0.5 * p * q + s0 + e.bundle.action[i];
    Ok(pre * amp * (I * ph / hbar).exp() / hess_det.sqrt())
}

/// Double phase space characteristic of `H(X/2 - JP)` from `(X0, J X0 / 2)` by RK4, d = 1.
pub fn double_phase_flow(model: &dyn Hamiltonian, x0: &PhasePoint, t: f64, step: f64) -> Result<([f64; 2], [f64; 2])> {
    check_dim(model)?;
    let rhs = |s: &[f64; 4]| -> [f64; 4] {
        // Y = X/2 - JP with JP = (P_p, -P_q).
        let yq = 0.5 * s[0] - s[3];
        let yp = 0.5 * s[1] + s[2];
        let mut g = [0.0; 2];
        model.gradient(&[yq], &[yp], &mut g);
        [g[1], -g[0], -0.5 * g[0], -0.5 * g[1]]
    };
    let (q, p) = (x0.q[0], x0.p[0]);
    let mut s = [q, p, 0.5 * p, -0.5 * q];
    let n = (t / step - 1e-9).ceil().max(1.0) as usize;
    let h = t / n as f64;
    let add = |a: &[f64; 4], k: &[f64; 4], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]];
    for _ in 0..n {
        let k1 = rhs(&s);
        let k2 = rhs(&add(&s, &k1, h / 2.0));
        let k3 = rhs(&add(&s, &k2, h / 2.0));
        let k4 = rhs(&add(&s, &k3, h));
        for r in 0..4 {
            s[r] += h / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
        }
    }
    Ok(([s[0], s[1]], [s[2], s[3]]))
}

/// `(2 pi hbar)^{-m/2} int exp(-p.Mp/(2 hbar) + i v.p/hbar) dp = det(M)^{-1/2} exp(-v.M^-1 v/(2 hbar))`.
///
/// The determinant root is the product of principal roots of the eigenvalues,
/// which all lie in the right half-plane when `Re M` is positive definite.
pub fn gaussian_integral(m: &CMatrix, v: &[C64], hbar: f64) -> Result<C64> {
    let n = m.nrows();
    if m.ncols() != n || v.len() != n {
        return Err(Error::Domain("Gaussian integral needs a square matrix and a matching vector".into()));
    }
    if linalg::max_abs(&(m - m.transpose())) > 1e-12 * (1.0 + linalg::max_abs(m)) {
        return Err(Error::Domain("Gaussian integral needs a symmetric matrix".into()));
    }
    if linalg::min_sym_eigenvalue(&linalg::real_part(m)) <= 0.0 {
        return Err(Error::Domain("Re M is not positive definite".into()));
    }
    let root: C64 = linalg::eigenvalues(m)?.iter().map(|l| l.sqrt()).product();
    let minv = linalg::inverse(m, "M")?;
    let vv = nalgebra::DVector::from_column_slice(v);
    let quad = (vv.transpose() * minv * &vv)[(0, 0)];
    Ok((-quad / (2.0 * hbar)).exp() / root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{builtin_model, BuiltinKind};
    use crate::transform::transform_at;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn poly(c: &[f64]) -> Polynomial {
        Polynomial::new(c.to_vec()).unwrap()
    }

    #[test]
    fn derivative_stacks() {
        let p = poly(&[1.0, -2.0, 0.0, 3.0]);
        assert_eq!(p.derivatives(2.0, 4), vec![21.0, 34.0, 36.0, 18.0, 0.0]);
        // (x e^{-x^2})' = (1 - 2x^2) e^{-x^2}; '' = (4x^3 - 6x) e^{-x^2}.
        let g = GaussPoly::new(poly(&[0.0, 1.0]), poly(&[0.0, 0.0, -1.0])).unwrap();
        let x: f64 = 0.7;
        let e = (-x * x).exp();
        let d = g.derivatives(x, 2);
        assert_relative_eq!(d[1], (1.0 - 2.0 * x * x) * e, epsilon = 1e-15);
        assert_relative_eq!(d[2], (4.0 * x.powi(3) - 6.0 * x) * e, epsilon = 1e-15);
    }

    #[test]
    fn extension_examples() {
        let sq = poly(&[0.0, 0.0, 1.0]);
        assert_relative_eq!(r_analytic_extension(&sq, 2, C64::new(0.4, 0.0)).re, 0.16);
        let v = r_analytic_extension(&sq, 2, C64::new(1.0, 1.0));
        assert!((v - C64::new(0.0, 2.0)).norm() < 1e-15);
        let cube = poly(&[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r_analytic_extension(&cube, 2, I), C64::new(0.0, 0.0));
        // Truncation of (x + iy)^3 after the y^2 term.
        let (x, y) = (0.5, 0.7);
        let want = C64::new(x * x * x - 3.0 * x * y * y, 3.0 * x * x * y);
        assert!((r_analytic_extension(&cube, 2, C64::new(x, y)) - want).norm() < 1e-15);
    }

    #[test]
    fn data_validation() {
        let s0 = poly(&[0.0, 0.0, 0.5]);
        let bad = GaussPoly::new(poly(&[1.0]), poly(&[0.0, 0.0, -0.5])).unwrap();
        assert!(WkbData::new(s0.clone(), bad, 2).is_err());
        assert!(WkbData::unit_chirp().with_order(1).is_err());
        assert!(GaussPoly::new(poly(&[1.0]), poly(&[0.0, 0.0, 0.5])).is_err());
        let flat = poly(&[0.0, 1.0]);
        assert!(WkbData::new(flat, WkbData::unit_chirp().r0, 2).is_err());
        let inflected = poly(&[0.0, 0.0, 0.5, 0.0, -0.05]);
        assert!(WkbData::new(inflected, WkbData::unit_chirp().r0, 3).is_err());
    }

    #[test]
    fn stationary_point_examples() {
        let d = WkbData::unit_chirp();
        assert_eq!(stationary_point_z(&d, &PhasePoint::new_1d(1.0, 1.0)), C64::new(1.0, 0.0));
        let z = stationary_point_z(&d, &PhasePoint::new_1d(0.0, 1.0));
        assert!((z - C64::new(0.5, -0.5)).norm() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn stationary_equation_holds(q in -3.0..3.0f64, p in -3.0..3.0f64, a in 0.1..2.0f64, b in -1.0..1.0f64) {
            let s0 = poly(&[0.0, b, 0.5 * a]);
            let d = WkbData::new(s0.clone(), WkbData::unit_chirp().r0, 2).unwrap();
            let z = stationary_point_z(&d, &PhasePoint::new_1d(q, p));
            let s1 = r_analytic_extension(&s0.derivative(), 2, z);
            prop_assert!((s1 - p + I * (z - q)).norm() < 1e-12);
        }
    }

    fn axes(half: f64, h: f64) -> Vec<Axis> {
        let a = Axis::with_spacing(-half, half, h).unwrap();
        vec![a, a]
    }

    #[test]
    fn lift_on_manifold_matches_real_display() {
        let d = WkbData::unit_chirp();
        let hbar = 0.1;
        for q in [-1.0, -0.3, 0.0, 0.8] {
            let p = q;
            let v = lift_parts(&d, q, p, hbar).0;
            let want = (PI * hbar).powf(-0.25) * d.r0.eval(q) / C64::new(1.0, -1.0).sqrt()
                * (I / hbar * (-p * q / 2.0 + d.s0.eval(q))).exp();
            assert!((v - want).norm() < 1e-14);
        }
    }

    #[test]
    fn lift_phase_has_nonnegative_imaginary_part() {
        let d = WkbData::new(poly(&[0.0, 0.0, 0.5, 0.0, 0.05]), WkbData::unit_chirp().r0, 2).unwrap();
        let ax = axes(2.0, 0.1);
        for &q in &ax[0].points() {
            for &p in &ax[1].points() {
                let z = stationary_point_z(&d, &PhasePoint::new_1d(q, p));
                let s = r_analytic_extension(&d.s0, 2, z);
                let dz = z - q;
                let phase = s - p * dz + 0.5 * I * dz * dz;
                assert!(phase.im >= -1e-12, "{q} {p} {}", phase.im);
            }
        }
        for q in [-1.0, 0.0, 0.5] {
            let p = d.s0.derivatives(q, 1)[1];
            let z = stationary_point_z(&d, &PhasePoint::new_1d(q, p));
            assert!(z.im.abs() <= 1e-15);
        }
    }

    #[test]
    fn lift_approaches_transform_at_first_order() {
        let d = WkbData::new(poly(&[0.0, 0.0, 0.5, 0.0, 0.05]), WkbData::unit_chirp().r0, 4).unwrap();
        let mut errs = Vec::new();
        for hbar in [0.1f64, 0.05] {
            let psi = d.position_field(Axis::with_spacing(-8.0, 8.0, 0.002).unwrap(), hbar).unwrap();
            let ax = vec![Axis::new(-3.0, 3.0, 41).unwrap(), Axis::new(-4.0, 4.0, 41).unwrap()];
            let l = lift_wkb(&d, &ax, hbar).unwrap();
            let pts: Vec<PhasePoint> = (0..l.len()).map(|k| PhasePoint::from_stacked(&l.coords(k))).collect();
            let w = transform_at(&psi, &pts).unwrap();
            let e = w.iter().zip(l.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let m = w.iter().map(|a| a.norm()).fold(0.0, f64::max);
            errs.push(e / m);
        }
        assert!(errs[0] < 5.0 * 0.1, "{errs:?}");
        let slope = (errs[0] / errs[1]).log2();
        assert!(slope > 0.85, "{errs:?} slope {slope}");
    }

    #[test]
    fn manifold_transport_examples() {
        let d = WkbData::unit_chirp();
        let alpha = Axis::new(-2.0, 2.0, 41).unwrap();
        let fo = FlowOptions::default();
        for t in [0.25, 0.5, 1.0] {
            let m = transport_manifold(&d, &builtin_model(BuiltinKind::Free, 1).unwrap(), t, &alpha, &fo).unwrap();
            let fit = m.fit_line().unwrap();
            assert_relative_eq!(fit.slope, 1.0 / (1.0 + 2.0 * t), epsilon = 1e-12);
            assert!(fit.offset.abs() < 1e-12);
            for (q, s) in m.q.iter().zip(&m.phase) {
                assert_relative_eq!(*s, q * q / (2.0 * (1.0 + 2.0 * t)), epsilon = 1e-12);
            }
            let m = transport_manifold(&d, &builtin_model(BuiltinKind::Linear, 1).unwrap(), t, &alpha, &fo).unwrap();
            let fit = m.fit_line().unwrap();
            assert_relative_eq!(fit.slope, 1.0 / (1.0 + 2.0 * t), epsilon = 1e-12);
            assert_relative_eq!(fit.offset, -t * (t + 1.0) / (1.0 + 2.0 * t), epsilon = 1e-12);
        }
    }

    #[test]
    fn harmonic_manifold_turns_vertical() {
        let d = WkbData::unit_chirp();
        let m = builtin_model(BuiltinKind::Harmonic, 1).unwrap();
        let (tc, _) = caustic_time(&d, &m, &[-1.0, 0.5], 2.0, &FlowOptions::default()).unwrap().unwrap();
        assert_relative_eq!(tc, 3.0 * PI / 8.0, epsilon = 1e-10);
        let alpha = Axis::new(-1.0, 1.0, 11).unwrap();
        match transport_manifold(&d, &m, 1.5, &alpha, &FlowOptions::default()) {
            Err(Error::Caustic { t, alpha: Some(_) }) => assert!((t - 3.0 * PI / 8.0).abs() < 2e-3),
            other => panic!("expected caustic, got {other:?}"),
        }
        assert!(caustic_time(&d, &builtin_model(BuiltinKind::Free, 1).unwrap(), &[0.0], 2.0, &FlowOptions::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn transported_phase_solves_hamilton_jacobi() {
        let d = WkbData::unit_chirp();
        let fo = FlowOptions::default();
        for kind in BuiltinKind::ALL {
            let m = builtin_model(kind, 1).unwrap();
            for (x, t) in [(0.3, 0.4), (-0.8, 0.2), (1.1, 0.6)] {
                let h = 1e-4;
                let (_, p) = transported_phase(&d, &m, x, t, &fo).unwrap();
                let st = (transported_phase(&d, &m, x, t + h, &fo).unwrap().0
                    - transported_phase(&d, &m, x, t - h, &fo).unwrap().0)
                    / (2.0 * h);
                let sx = (transported_phase(&d, &m, x + h, t, &fo).unwrap().0
                    - transported_phase(&d, &m, x - h, t, &fo).unwrap().0)
                    / (2.0 * h);
                assert!((sx - p).abs() < 1e-7);
                assert!((st + m.value(&[x], &[sx])).abs() < 1e-6, "{kind}");
            }
        }
    }

    fn manifold(kind: BuiltinKind, t: f64) -> (WkbData, crate::models::HamiltonianModel, LagrangianManifold) {
        let d = WkbData::unit_chirp();
        let m = builtin_model(kind, 1).unwrap();
        let lm = transport_manifold(&d, &m, t, &Axis::new(-3.0, 3.0, 61).unwrap(), &FlowOptions::default()).unwrap();
        (d, m, lm)
    }

    #[test]
    fn fsc_on_and_off_manifold() {
        let fo = FlowOptions::default();
        let (d, m, lm) = manifold(BuiltinKind::Free, 0.5);
        let k = 23;
        let x = PhasePoint::new_1d(lm.q[k], lm.p[k]);
        let y = manifold_point(&d, lm.alpha[k]);
        let f = asymptotic_phase_fsc(&x, &y, &lm, &d, &m, &fo).unwrap();
        assert!(f.value.im.abs() < 1e-10);
        assert!(!f.ambiguous);
        // Normal displacement: Im F = delta.Im Q.delta/2 to third order.
        let e = orbit_end(&d, &m, lm.alpha[k], 0.5, &fo).unwrap();
        let tn = (e.tangent[0].powi(2) + e.tangent[1].powi(2)).sqrt();
        let nrm = [-e.tangent[1] / tn, e.tangent[0] / tn];
        let q = double_anisotropy_q(&e.bundle.z(e.bundle.last()).unwrap()).unwrap().m;
        for delta in [1e-2, 5e-3] {
            let xd = PhasePoint::new_1d(x.q[0] + delta * nrm[0], x.p[0] + delta * nrm[1]);
            let fd = asymptotic_phase_fsc(&xd, &y, &lm, &d, &m, &fo).unwrap();
            let want: f64 = (0..2).flat_map(|r| (0..2).map(move |c| (r, c))).map(|(r, c)| q[(r, c)].im * nrm[r] * nrm[c]).sum::<f64>()
                * 0.5
                * delta
                * delta;
            assert!((fd.value.im - want).abs() < 1e-3 * delta * delta, "{} {want}", fd.value.im);
        }
    }

    #[test]
    fn fsc_at_time_zero_reduces_to_boundary_terms() {
        let (d, m, lm) = manifold(BuiltinKind::Harmonic, 0.0);
        let y = manifold_point(&d, 0.7);
        let f = asymptotic_phase_fsc(&y, &y, &lm, &d, &m, &FlowOptions::default()).unwrap();
        let want = d.s0.eval(0.7) - 0.5 * y.p[0] * y.q[0];
        assert!((f.value - want).norm() < 1e-12);
    }

    #[test]
    fn fsc_solves_weyl_hamilton_jacobi_on_manifold() {
        let fo = FlowOptions::default();
        for kind in BuiltinKind::ALL {
            let t = 0.3;
            let (d, m, lm) = manifold(kind, t);
            let k = 35;
            let x = PhasePoint::new_1d(lm.q[k], lm.p[k]);
            let y = manifold_point(&d, lm.alpha[k]);
            let h = 1e-4;
            let at = |dq: f64, dp: f64, dt: f64| {
                let lmt = transport_manifold(&d, &m, t + dt, &Axis::new(-3.0, 3.0, 61).unwrap(), &fo).unwrap();
                asymptotic_phase_fsc(&PhasePoint::new_1d(x.q[0] + dq, x.p[0] + dp), &y, &lmt, &d, &m, &fo).unwrap().value
            };
            let ft = (at(0.0, 0.0, h) - at(0.0, 0.0, -h)) / (2.0 * h);
            let fq = (at(h, 0.0, 0.0) - at(-h, 0.0, 0.0)) / (2.0 * h);
            let fp = (at(0.0, h, 0.0) - at(0.0, -h, 0.0)) / (2.0 * h);
            // Quadratic H extends to complex arguments by its polynomial formula.
            let hq = 0.5 * x.q[0] - fp;
            let hp = 0.5 * x.p[0] + fq;
            let hval = hp * hp
                + match kind {
                    BuiltinKind::Free => C64::new(0.0, 0.0),
                    BuiltinKind::Linear => hq,
                    BuiltinKind::Harmonic => hq * hq,
                };
            let res = (ft + hval).norm();
            assert!(res < 1e-6, "{kind}: {res}");
        }
    }

    #[test]
    fn double_phase_integrals_of_motion() {
        let m = crate::models::polynomial_model(&[
            crate::models::Monomial::new(0, 2, 1.0),
            crate::models::Monomial::new(4, 0, 1.0),
        ])
        .unwrap();
        let x0 = PhasePoint::new_1d(0.7, -0.2);
        let (x, p) = double_phase_flow(&m, &x0, 1.0, 1e-3).unwrap();
        // c = X/2 + JP with JP = (P_p, -P_q).
        assert!((0.5 * x[0] + p[1]).abs() < 1e-12);
        assert!((0.5 * x[1] - p[0]).abs() < 1e-12);
        let b = integrate_characteristics(&m, &x0, 1.0, &FlowOptions::default().at(vec![1.0])).unwrap();
        assert!((x[0] - b.points[1].q[0]).abs() < 1e-10);
    }

    #[test]
    fn solution_on_manifold_at_time_zero_is_the_lift() {
        let hbar = 0.05;
        let (d, m, lm) = manifold(BuiltinKind::Free, 0.0);
        for k in [20, 30, 41] {
            let x = PhasePoint::new_1d(lm.q[k], lm.p[k]);
            let v = solution_on_manifold(&x, &lm, &d, &m, hbar, &FlowOptions::default()).unwrap();
            let want = lift_parts(&d, x.q[0], x.p[0], hbar).0;
            assert!((v - want).norm() < 1e-8 * want.norm(), "{v} {want}");
        }
        let off = PhasePoint::new_1d(0.0, 0.5);
        assert!(matches!(
            solution_on_manifold(&off, &lm, &d, &m, hbar, &FlowOptions::default()),
            Err(Error::Projection(_))
        ));
    }

    #[test]
    fn solution_on_manifold_is_first_order_accurate() {
        // Reference: transform of the exact free evolution, alpha0 = 1 + i hbar.
        let (d, m, lm) = manifold(BuiltinKind::Free, 0.5);
        let t = 0.5;
        let mut errs = Vec::new();
        for hbar in [0.1, 0.05] {
            let a0 = C64::new(1.0, hbar);
            let den = 1.0 + 2.0 * a0 * t;
            let psi = ComplexField::from_fn(vec![Axis::with_spacing(-9.0, 9.0, 0.004).unwrap()], hbar, Domain::Position, |x| {
                PI.powf(-0.25) / den.sqrt() * (I / (2.0 * hbar) * a0 / den * x[0] * x[0]).exp()
            })
            .unwrap();
            let mut worst = 0.0f64;
            for k in [25, 30, 33] {
                let x = PhasePoint::new_1d(lm.q[k], lm.p[k]);
                let w = transform_at(&psi, std::slice::from_ref(&x)).unwrap()[0];
                let v = solution_on_manifold(&x, &lm, &d, &m, hbar, &FlowOptions::default()).unwrap();
                worst = worst.max((v - w).norm() / w.norm());
            }
            errs.push(worst);
        }
        assert!(errs[1] < 0.05, "{errs:?}");
        let slope = (errs[0] / errs[1]).log2();
        assert!((slope - 1.0).abs() < 0.2, "{errs:?}");
    }

    #[test]
    fn gaussian_integral_examples() {
        let one = gaussian_integral(&CMatrix::identity(1, 1), &[C64::new(0.0, 0.0)], 1.0).unwrap();
        assert_relative_eq!(one.re, 1.0);
        let two = gaussian_integral(&(CMatrix::identity(1, 1) * C64::new(2.0, 0.0)), &[C64::new(0.0, 0.0)], 1.0).unwrap();
        assert_relative_eq!(two.re, 2f64.powf(-0.5), epsilon = 1e-15);
        let bad = CMatrix::from_element(1, 1, C64::new(-1.0, 1.0));
        assert!(gaussian_integral(&bad, &[C64::new(0.0, 0.0)], 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn gaussian_integral_matches_quadrature(
            a in 0.5..2.0f64, b in -2.0..2.0f64, c in 0.5..2.0f64, e in -2.0..2.0f64, off in -0.3..0.3f64,
            v1 in -1.0..1.0f64, v2 in -1.0..1.0f64, w1 in -0.5..0.5f64, w2 in -0.5..0.5f64,
        ) {
            let hbar = 0.7;
            let m = CMatrix::from_row_slice(2, 2, &[C64::new(a, b), C64::new(off, 0.2 * off), C64::new(off, 0.2 * off), C64::new(c, e)]);
            let v = [C64::new(v1, w1), C64::new(v2, w2)];
            let ax = Axis::with_spacing(-12.0, 12.0, 0.03).unwrap();
            let pts = ax.points();
            let mut s = C64::new(0.0, 0.0);
            for (i, &x) in pts.iter().enumerate() {
                for (j, &y) in pts.iter().enumerate() {
                    let quad = m[(0, 0)] * x * x + 2.0 * m[(0, 1)] * x * y + m[(1, 1)] * y * y;
                    let lin = v[0] * x + v[1] * y;
                    s += (-quad / (2.0 * hbar) + I * lin / hbar).exp() * ax.weight(i) * ax.weight(j);
                }
            }
            s /= 2.0 * PI * hbar;
            let want = gaussian_integral(&m, &v, hbar).unwrap();
            prop_assert!((s - want).norm() < 1e-8 * want.norm(), "{} {}", s, want);
        }
    }

    #[test]
    fn lift_detects_branch_jumps() {
        // S0'' > 0 everywhere, yet the fourth-order extension of S0'' pushes 1 - iS'' across the cut.
        let d = WkbData::new(poly(&[0.0, 0.0, 0.1, 0.0, 1.0]), WkbData::unit_chirp().r0, 4).unwrap();
        let ax = vec![Axis::new(-3.0, 3.0, 31).unwrap(), Axis::new(-40.0, 40.0, 81).unwrap()];
        assert!(matches!(lift_wkb(&d, &ax, 0.1), Err(Error::Branch { .. })));
        let chirp = WkbData::unit_chirp().with_order(4).unwrap();
        assert!(lift_wkb(&chirp, &ax, 0.1).is_ok());
    }
}
