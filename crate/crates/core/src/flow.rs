//! Characteristic system: Hamilton's equations, the action integral and the
//! linear variational system `(A, B)` in the Hamiltonian gauge.
//!
//! The anisotropy `Z = B A^-1` is never integrated directly; it is recovered
//! from the frame, which keeps the dynamics linear through caustics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix, C64, I};
use crate::models::{dot, Hamiltonian, PhasePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMethod {
    /// Closed form when the model has one, otherwise RK4.
    #[default]
    Auto,
    Rk4,
    Adaptive,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Sampling {
    /// Record every integrator step (for exact flows: the RK4 step grid).
    #[default]
    EveryStep,
    /// Record only at these times (plus t = 0).
    At(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOptions {
    pub method: FlowMethod,
    /// Maximal RK4 step; the actual step is `T / ceil(T / step)`.
    pub step: f64,
    pub rtol: f64,
    pub sampling: Sampling,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { method: FlowMethod::Auto, step: 1e-3, rtol: 1e-10, sampling: Sampling::EveryStep }
    }
}

impl FlowOptions {
    pub fn with_method(mut self, method: FlowMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn at(mut self, times: Vec<f64>) -> Self {
        self.sampling = Sampling::At(times);
        self
    }
}

/// Position and momentum variational forms.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFrame {
    pub a: CMatrix,
    pub b: CMatrix,
}

/// Max-norm residuals of the frame identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResiduals {
    /// `A^T B - B^T A`
    pub symmetry: f64,
    /// `A^* B - B^* A - 2i I`
    pub lagrange: f64,
    /// `conj(A) B^T - A conj(B)^T - 2i I`
    pub lagrange_conj: f64,
    /// `Im Z - (A A^*)^-1`
    pub im_z: f64,
    /// `Im(-Z^-1) - (B B^*)^-1`
    pub im_z_inv: f64,
}

impl FrameResiduals {
    pub fn max(&self) -> f64 {
        [self.symmetry, self.lagrange, self.lagrange_conj, self.im_z, self.im_z_inv]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

impl VariationalFrame {
    pub fn initial(d: usize) -> Self {
        Self { a: CMatrix::identity(d, d), b: CMatrix::identity(d, d) * I }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Builds the frame from a real flow Jacobian `[[q_q, q_p], [p_q, p_p]]`.
    pub fn from_jacobian(m: &RMatrix) -> Self {
        let d = m.nrows() / 2;
        let a = CMatrix::from_fn(d, d, |i, j| C64::new(m[(i, j)], m[(i, d + j)]));
        let b = CMatrix::from_fn(d, d, |i, j| C64::new(m[(d + i, j)], m[(d + i, d + j)]));
        Self { a, b }
    }

    pub fn jacobian(&self) -> RMatrix {
        let d = self.dim();
        RMatrix::from_fn(2 * d, 2 * d, |i, j| {
            match (i < d, j < d) {
                (true, true) => self.a[(i, j)].re,
                (true, false) => self.a[(i, j - d)].im,
                (false, true) => self.b[(i - d, j)].re,
                (false, false) => self.b[(i - d, j - d)].im,
            }
        })
    }

    pub fn residuals(&self) -> Result<FrameResiduals> {
        let d = self.dim();
        let (a, b) = (&self.a, &self.b);
        let two_i = CMatrix::identity(d, d) * C64::new(0.0, 2.0);
        let symmetry = linalg::max_abs(&(a.transpose() * b - b.transpose() * a));
        let lagrange = linalg::max_abs(&(a.adjoint() * b - b.adjoint() * a - &two_i));
        let lagrange_conj =
            linalg::max_abs(&(a.conjugate() * b.transpose() - a * b.adjoint() - &two_i));
        let z = anisotropy_z(self)?.m;
        let aa = linalg::inverse(&(a * a.adjoint()), "A A*")?;
        let im_z = linalg::max_abs_real(&(linalg::imag_part(&z) - linalg::real_part(&aa)));
        let zinv = linalg::inverse(&z, "Z")?;
        let bb = linalg::inverse(&(b * b.adjoint()), "B B*")?;
        let im_z_inv = linalg::max_abs_real(&(-linalg::imag_part(&zinv) - linalg::real_part(&bb)));
        Ok(FrameResiduals { symmetry, lagrange, lagrange_conj, im_z, im_z_inv })
    }
}

/// Complex symmetric matrix with positive-definite imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct SiegelMatrix {
    pub m: CMatrix,
}

impl SiegelMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let scale = 1.0 + linalg::max_abs(&m);
        let asym = linalg::max_abs(&(&m - m.transpose()));
        if asym > 1e-10 * scale {
            return Err(Error::Domain(format!("matrix not symmetric (defect {asym:.2e})")));
        }
        let lo = linalg::min_sym_eigenvalue(&linalg::imag_part(&m));
        if lo <= 0.0 {
            return Err(Error::Domain(format!("imaginary part not positive definite (min eig {lo:.3e})")));
        }
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn scalar(&self) -> C64 {
        self.m[(0, 0)]
    }
}

/// Time-sampled record of one orbit.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub frames: Vec<VariationalFrame>,
    pub action: Vec<f64>,
    pub log_det_a: Vec<C64>,
}

impl TrajectoryBundle {
    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn last(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the stored sample at time t.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let tmax = self.final_time();
        let tol = 1e-9 * (1.0 + tmax.abs());
        if !(t >= -tol && t <= tmax + tol) {
            return Err(Error::Range { t, max: tmax });
        }
        let i = self.times.partition_point(|&s| s < t - tol);
        if i < self.times.len() && (self.times[i] - t).abs() <= tol {
            Ok(i)
        } else {
            Err(Error::Domain(format!(
                "t = {t} is not a stored sample; request it through Sampling::At"
            )))
        }
    }

    pub fn z(&self, i: usize) -> Result<SiegelMatrix> {
        anisotropy_z(&self.frames[i])
    }

    pub fn amplitude(&self, i: usize) -> C64 {
        (-0.5 * self.log_det_a[i]).exp()
    }
}

const MAX_BRANCH_STEP: f64 = std::f64::consts::FRAC_PI_2;

/// Flat ODE state: q, p, A (re/im interleaved), B, action.
struct Layout {
    d: usize,
}

impl Layout {
    fn len(&self) -> usize {
        2 * self.d + 4 * self.d * self.d + 1
    }
    fn a(&self) -> usize {
        2 * self.d
    }
    fn b(&self) -> usize {
        2 * self.d + 2 * self.d * self.d
    }
    fn action(&self) -> usize {
        self.len() - 1
    }

    fn pack(&self, x: &PhasePoint, f: &VariationalFrame, action: f64) -> Vec<f64> {
        let d = self.d;
        let mut y = vec![0.0; self.len()];
        y[..d].copy_from_slice(&x.q);
        y[d..2 * d].copy_from_slice(&x.p);
        for i in 0..d {
            for j in 0..d {
                let k = i * d + j;
                y[self.a() + 2 * k] = f.a[(i, j)].re;
                y[self.a() + 2 * k + 1] = f.a[(i, j)].im;
                y[self.b() + 2 * k] = f.b[(i, j)].re;
                y[self.b() + 2 * k + 1] = f.b[(i, j)].im;
            }
        }
        y[self.action()] = action;
        y
    }

    fn point(&self, y: &[f64]) -> PhasePoint {
        PhasePoint::from_stacked(&y[..2 * self.d])
    }

    fn matrix(&self, y: &[f64], off: usize) -> CMatrix {
        let d = self.d;
        CMatrix::from_fn(d, d, |i, j| {
            let k = i * d + j;
            C64::new(y[off + 2 * k], y[off + 2 * k + 1])
        })
    }

    fn frame(&self, y: &[f64]) -> VariationalFrame {
        VariationalFrame { a: self.matrix(y, self.a()), b: self.matrix(y, self.b()) }
    }

    fn det_a(&self, y: &[f64]) -> C64 {
        if self.d == 1 {
            C64::new(y[self.a()], y[self.a() + 1])
        } else {
            self.matrix(y, self.a()).determinant()
        }
    }
}

struct Rhs<'a> {
    model: &'a dyn Hamiltonian,
    lay: Layout,
    h0: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Rhs<'_> {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let d = self.lay.d;
        let n = 2 * d;
        let (q, p) = (&y[..d], &y[d..n]);
        self.model.gradient(q, p, &mut self.grad);
        self.model.hessian(q, p, &mut self.hess);
        if self.grad.iter().chain(self.hess.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite derivative at q = {q:?}, p = {p:?}")));
        }
        for k in 0..d {
            dy[k] = self.grad[d + k];
            dy[d + k] = -self.grad[k];
        }
        let h = &self.hess;
        let hb = |r: usize, c: usize| h[r * n + c];
        let (ao, bo) = (self.lay.a(), self.lay.b());
        for i in 0..d {
            for j in 0..d {
                let (mut da_re, mut da_im, mut db_re, mut db_im) = (0.0, 0.0, 0.0, 0.0);
                for k in 0..d {
                    let (ar, ai) = (y[ao + 2 * (k * d + j)], y[ao + 2 * (k * d + j) + 1]);
                    let (br, bi) = (y[bo + 2 * (k * d + j)], y[bo + 2 * (k * d + j) + 1]);
                    let (hpq, hpp) = (hb(d + i, k), hb(d + i, d + k));
                    let (hqq, hqp) = (hb(i, k), hb(i, d + k));
                    da_re += hpq * ar + hpp * br;
                    da_im += hpq * ai + hpp * bi;
                    db_re -= hqq * ar + hqp * br;
                    db_im -= hqq * ai + hqp * bi;
                }
                let kk = i * d + j;
                dy[ao + 2 * kk] = da_re;
                dy[ao + 2 * kk + 1] = da_im;
                dy[bo + 2 * kk] = db_re;
                dy[bo + 2 * kk + 1] = db_im;
            }
        }
        dy[self.lay.action()] = dot(p, &self.grad[d..n]) - self.h0;
        Ok(())
    }
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, k: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(k) {
        *o = a + h * b;
    }
}

fn rk4_step(rhs: &mut Rhs, y: &[f64], h: f64, ks: &mut [Vec<f64>; 5]) -> Result<Vec<f64>> {
    let [k1, k2, k3, k4, tmp] = ks;
    rhs.eval(y, k1)?;
    axpy(tmp, y, 0.5 * h, k1);
    rhs.eval(tmp, k2)?;
    axpy(tmp, y, 0.5 * h, k2);
    rhs.eval(tmp, k3)?;
    axpy(tmp, y, h, k3);
    rhs.eval(tmp, k4)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, v)| v + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

// Dormand-Prince 5(4) tableau (autonomous system, so the nodes are not needed).
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince attempt; returns the 5th-order state and an error norm.
fn dopri_step(rhs: &mut Rhs, y: &[f64], h: f64, rtol: f64) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    rhs.eval(y, &mut k[0])?;
    for s in 1..7 {
        for i in 0..n {
            tmp[i] = y[i] + h * (0..s).map(|j| DP_A[s][j] * k[j][i]).sum::<f64>();
        }
        rhs.eval(&tmp, &mut k[s])?;
    }
    // Stage 7 was evaluated at the 5th-order solution (FSAL), which is `tmp`.
    let y5 = tmp.clone();
    let mut err = 0.0f64;
    for i in 0..n {
        let y4 = y[i] + h * (0..7).map(|j| DP_B4[j] * k[j][i]).sum::<f64>();
        let sc = rtol * (1e-3 + y[i].abs().max(y5[i].abs()));
        err = err.max(((y5[i] - y4) / sc).abs());
    }
    Ok((y5, err))
}

struct Recorder {
    bundle: TrajectoryBundle,
}

impl Recorder {
    fn push(&mut self, t: f64, x: PhasePoint, f: VariationalFrame, action: f64, logdet: C64) {
        self.bundle.times.push(t);
        self.bundle.points.push(x);
        self.bundle.frames.push(f);
        self.bundle.action.push(action);
        self.bundle.log_det_a.push(logdet);
    }
}

fn segment_targets(t_end: f64, sampling: &Sampling) -> Result<Vec<f64>> {
    match sampling {
        Sampling::EveryStep => Ok(vec![t_end]),
        Sampling::At(ts) => {
            let mut v: Vec<f64> = ts.iter().copied().filter(|&t| t > 0.0).collect();
            if v.iter().any(|&t| t > t_end * (1.0 + 1e-12) + 1e-15 || !t.is_finite()) {
                return Err(Error::Domain(format!("sample times must lie in [0, {t_end}]")));
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
            if v.last().map_or(true, |&t| (t - t_end).abs() > 1e-14) && t_end > 0.0 {
                v.push(t_end);
            }
            Ok(v)
        }
    }
}

/// Integrates the characteristic system from `x0` over `[0, t_end]`.
pub fn integrate_characteristics(
    model: &dyn Hamiltonian,
    x0: &PhasePoint,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<TrajectoryBundle> {
    let d = model.dim();
    if x0.dim() != d {
        return Err(Error::Domain(format!("phase point has dimension {}, model {d}", x0.dim())));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("duration must be finite and non-negative (got {t_end})")));
    }
    if !(opts.step > 0.0) {
        return Err(Error::Domain("flow step must be positive".into()));
    }
    let method = match opts.method {
        FlowMethod::Auto if model.has_exact_flow() => FlowMethod::Exact,
        FlowMethod::Auto => FlowMethod::Rk4,
        FlowMethod::Exact if !model.has_exact_flow() => {
            return Err(Error::Config(format!(
                "flow.method: `exact` requested but {} has no closed-form flow",
                model.label()
            )))
        }
        m => m,
    };
    let mut rec = Recorder {
        bundle: TrajectoryBundle {
            times: Vec::new(),
            points: Vec::new(),
            frames: Vec::new(),
            action: Vec::new(),
            log_det_a: Vec::new(),
        },
    };
    rec.push(0.0, x0.clone(), VariationalFrame::initial(d), 0.0, C64::new(0.0, 0.0));
    if t_end == 0.0 {
        return Ok(rec.bundle);
    }
    let targets = segment_targets(t_end, &opts.sampling)?;
    let every = matches!(opts.sampling, Sampling::EveryStep);

    if method == FlowMethod::Exact {
        let mut times = Vec::new();
        if every {
            let n = (t_end / opts.step).ceil().max(1.0) as usize;
            times.extend((1..=n).map(|i| t_end * i as f64 / n as f64));
        } else {
            times = targets;
        }
        for t in times {
            let s = model.exact(x0, t).expect("exact flow checked above");
            rec.push(t, s.point, VariationalFrame::from_jacobian(&s.jacobian), s.action, s.log_det_a);
        }
        return Ok(rec.bundle);
    }

    let lay = Layout { d };
    let mut rhs = Rhs {
        model,
        lay: Layout { d },
        h0: model.value(&x0.q, &x0.p),
        grad: vec![0.0; 2 * d],
        hess: vec![0.0; 4 * d * d],
    };
    let mut y = lay.pack(x0, &VariationalFrame::initial(d), 0.0);
    let mut logdet = C64::new(0.0, 0.0);
    let mut det_prev = C64::new(1.0, 0.0);
    let mut t = 0.0;
    let n = lay.len();
    let mut ks: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);

    // Advances log det A across an accepted step; None if the phase moved too far.
    let advance_logdet = |y_new: &[f64], det_prev: C64| -> Option<(C64, C64)> {
        let det_new = lay.det_a(y_new);
        if det_new.norm() == 0.0 {
            return None;
        }
        let inc = (det_new / det_prev).ln();
        (inc.im.abs() < MAX_BRANCH_STEP).then_some((inc, det_new))
    };

    match method {
        FlowMethod::Rk4 => {
            for &target in &targets {
                let span = target - t;
                let steps = (span / opts.step - 1e-9).ceil().max(1.0) as usize;
                let h = span / steps as f64;
                for i in 1..=steps {
                    let mut sub = 1usize;
                    let (y_new, inc, det_new) = loop {
                        let hs = h / sub as f64;
                        let mut yy = y.clone();
                        let mut dprev = det_prev;
                        let mut total = C64::new(0.0, 0.0);
                        let mut ok = true;
                        for _ in 0..sub {
                            yy = rk4_step(&mut rhs, &yy, hs, &mut ks)?;
                            match advance_logdet(&yy, dprev) {
                                Some((inc, dn)) => {
                                    total += inc;
                                    dprev = dn;
                                }
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if ok {
                            break (yy, total, dprev);
                        }
                        sub *= 2;
                        if sub > 1 << 20 {
                            return Err(Error::StepUnderflow { t });
                        }
                    };
                    y = y_new;
                    logdet += inc;
                    det_prev = det_new;
                    t = if i == steps { target } else { t + h };
                    if every || i == steps {
                        rec.push(t, lay.point(&y), lay.frame(&y), y[lay.action()], logdet);
                    }
                }
            }
        }
        FlowMethod::Adaptive => {
            let mut h = opts.step.min(0.05);
            let h_max = 0.1;
            for &target in &targets {
                while t < target {
                    let hs = h.min(target - t);
                    if hs < 1e-14 * (1.0 + t) {
                        return Err(Error::StepUnderflow { t });
                    }
                    let (y_new, err) = dopri_step(&mut rhs, &y, hs, opts.rtol)?;
                    let accepted = err <= 1.0 && err.is_finite();
                    let branch = if accepted { advance_logdet(&y_new, det_prev) } else { None };
                    match branch {
                        Some((inc, dn)) => {
                            y = y_new;
                            logdet += inc;
                            det_prev = dn;
                            t = if target - t - hs <= 1e-14 * (1.0 + t) { target } else { t + hs };
                            if every || t == target {
                                rec.push(t, lay.point(&y), lay.frame(&y), y[lay.action()], logdet);
                            }
                            let fac = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
                            h = (hs * fac.clamp(0.2, 5.0)).min(h_max);
                        }
                        None => {
                            let fac = if err.is_finite() && err > 1.0 { 0.9 * err.powf(-0.25) } else { 0.5 };
                            h = hs * fac.clamp(0.1, 0.5);
                        }
                    }
                }
            }
        }
        FlowMethod::Auto | FlowMethod::Exact => unreachable!(),
    }
    Ok(rec.bundle)
}

/// `Z = B A^-1`.
pub fn anisotropy_z(frame: &VariationalFrame) -> Result<SiegelMatrix> {
    let ainv = frame
        .a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("det A vanished; integrator drift".into()))?;
    let z = &frame.b * ainv;
    let zs = (&z + z.transpose()) * C64::new(0.5, 0.0);
    SiegelMatrix::new(zs)
}

/// Real flow Jacobian `d X_t / d X_0` at sample time t.
pub fn flow_jacobian(bundle: &TrajectoryBundle, t: f64) -> Result<RMatrix> {
    let i = bundle.index_at(t)?;
    Ok(bundle.frames[i].jacobian())
}

/// `a(t) = det A(t)^{-1/2}` on the continuously tracked branch.
pub fn amplitude_a(bundle: &TrajectoryBundle, t: f64) -> Result<C64> {
    let i = bundle.index_at(t)?;
    Ok(bundle.amplitude(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EhrenfestWarning {
    pub t: f64,
    pub jacobian_norm: f64,
    pub threshold: f64,
}

/// Flags samples where the linearized flow has grown past `hbar^{-1/2}`.
///
/// One warning is emitted per upward crossing of the threshold.
pub fn ehrenfest_guard(bundle: &TrajectoryBundle, hbar: Option<f64>) -> Vec<EhrenfestWarning> {
    let Some(hbar) = hbar else { return Vec::new() };
    let threshold = hbar.powf(-0.5);
    let mut out = Vec::new();
    let mut above = false;
    for (t, f) in bundle.times.iter().zip(&bundle.frames) {
        let norm = f.jacobian().singular_values().iter().copied().fold(0.0, f64::max);
        let now = norm > threshold;
        if now && !above {
            out.push(EhrenfestWarning { t: *t, jacobian_norm: norm, threshold });
        }
        above = now;
    }
    out
}

/// Max residual of `dZ/dt + Z H_pp Z + H_qp Z + Z H_pq + H_qq = 0` over the
/// interior samples, with five-point differences in time.
pub fn riccati_residual(model: &dyn Hamiltonian, bundle: &TrajectoryBundle) -> Result<f64> {
    let d = bundle.dim();
    let n = 2 * d;
    let zs: Vec<CMatrix> = bundle.frames.iter().map(|f| anisotropy_z(f).map(|z| z.m)).collect::<Result<_>>()?;
    let mut hess = vec![0.0; n * n];
    let mut worst = 0.0f64;
    // Five-point stencil; assumes locally uniform sampling.
    for i in 2..bundle.len().saturating_sub(2) {
        let h = (bundle.times[i + 2] - bundle.times[i - 2]) / 4.0;
        let dz = (&zs[i - 2] - &zs[i - 1] * C64::new(8.0, 0.0) + &zs[i + 1] * C64::new(8.0, 0.0) - &zs[i + 2])
            / C64::new(12.0 * h, 0.0);
        let x = &bundle.points[i];
        model.hessian(&x.q, &x.p, &mut hess);
        let block = |r0: usize, c0: usize| {
            CMatrix::from_fn(d, d, |r, c| C64::new(hess[(r0 + r) * n + c0 + c], 0.0))
        };
        let (hqq, hqp, hpq, hpp) = (block(0, 0), block(0, d), block(d, 0), block(d, d));
        let z = &zs[i];
        let r = dz + z * &hpp * z + &hqp * z + z * &hpq + hqq;
        worst = worst.max(linalg::max_abs(&r));
    }
    Ok(worst)
}

/// Energy drift `max |H(X_t) - H(X_0)|` along the stored samples.
pub fn energy_drift(model: &dyn Hamiltonian, bundle: &TrajectoryBundle) -> f64 {
    let x0 = &bundle.points[0];
    let h0 = model.value(&x0.q, &x0.p);
    bundle.points.iter().map(|x| (model.value(&x.q, &x.p) - h0).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{builtin_model, polynomial_model, BuiltinKind, Monomial};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rk4() -> FlowOptions {
        FlowOptions::default().with_method(FlowMethod::Rk4)
    }

    fn quartic() -> crate::models::HamiltonianModel {
        polynomial_model(&[Monomial::new(0, 2, 1.0), Monomial::new(4, 0, 1.0)]).unwrap()
    }

    #[test]
    fn free_action_example() {
        let m = builtin_model(BuiltinKind::Free, 1).unwrap();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(1.0, 0.5), 0.2, &rk4()).unwrap();
        assert_relative_eq!(b.action[b.last()], 0.05, epsilon = 1e-13);
    }

    #[test]
    fn linear_endpoint_and_action() {
        let m = builtin_model(BuiltinKind::Linear, 1).unwrap();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.0, 0.0), 1.0, &rk4()).unwrap();
        let x = &b.points[b.last()];
        assert_relative_eq!(x.q[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(x.p[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(b.action[b.last()], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_duration_gives_initial_sample() {
        let m = quartic();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.3, 0.1), 0.0, &rk4()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.frames[0], VariationalFrame::initial(1));
        assert_eq!(b.action[0], 0.0);
        assert_eq!(b.log_det_a[0], C64::new(0.0, 0.0));
    }

    #[test]
    fn step_size_rule() {
        let m = builtin_model(BuiltinKind::Free, 1).unwrap();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.0, 1.0), 0.0105, &rk4()).unwrap();
        assert_eq!(b.len(), 12);
        assert_relative_eq!(b.times[1], 0.0105 / 11.0, epsilon = 1e-16);
    }

    #[test]
    fn z_examples() {
        assert_eq!(anisotropy_z(&VariationalFrame::initial(2)).unwrap().m, CMatrix::identity(2, 2) * I);
        for kind in BuiltinKind::ALL {
            let m = builtin_model(kind, 1).unwrap();
            let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.2, -0.4), 0.5, &rk4()).unwrap();
            let z = b.z(b.last()).unwrap().scalar();
            let expect = match kind {
                BuiltinKind::Harmonic => I,
                _ => C64::new(0.5, 0.5),
            };
            assert_relative_eq!((z - expect).norm(), 0.0, epsilon = 1e-12);
        }
        let m = builtin_model(BuiltinKind::Harmonic, 1).unwrap();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(1.0, 0.0), PI / 2.0, &rk4()).unwrap();
        assert_relative_eq!((b.z(b.last()).unwrap().scalar() - I).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_examples() {
        let m = builtin_model(BuiltinKind::Free, 1).unwrap();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.0, 0.0), 1.0, &rk4()).unwrap();
        let jm = flow_jacobian(&b, 1.0).unwrap();
        assert_relative_eq!(jm, RMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(flow_jacobian(&b, 0.0).unwrap(), RMatrix::identity(2, 2));
        assert!(matches!(flow_jacobian(&b, 1.5), Err(Error::Range { .. })));

        let h = builtin_model(BuiltinKind::Harmonic, 1).unwrap();
        let b = integrate_characteristics(&h, &PhasePoint::new_1d(0.3, 0.0), PI / 4.0, &rk4()).unwrap();
        let jm = flow_jacobian(&b, PI / 4.0).unwrap();
        assert_relative_eq!(jm, RMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn amplitude_examples() {
        let m = builtin_model(BuiltinKind::Free, 1).unwrap();
        let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.0, 0.0), 0.5, &rk4()).unwrap();
        assert_eq!(amplitude_a(&b, 0.0).unwrap(), C64::new(1.0, 0.0));
        let a = amplitude_a(&b, 0.5).unwrap();
        assert_relative_eq!(a.re, 0.776886987015019, epsilon = 1e-12);
        assert_relative_eq!(a.im, -0.321797126452791, epsilon = 1e-12);
        for &t in &[0.1, 0.25, 0.4] {
            let i = b.index_at(t).unwrap();
            let expect = C64::new(1.0, 2.0 * t).powf(-0.5);
            assert_relative_eq!((b.amplitude(i) - expect).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_det_is_continued_past_the_principal_branch() {
        let m = builtin_model(BuiltinKind::Harmonic, 1).unwrap();
        let t = 2.0;
        for method in [FlowMethod::Rk4, FlowMethod::Adaptive, FlowMethod::Exact] {
            let b = integrate_characteristics(&m, &PhasePoint::new_1d(0.5, 0.5), t, &FlowOptions::default().with_method(method))
                .unwrap();
            assert_relative_eq!(b.log_det_a[b.last()].im, 2.0 * t, epsilon = 1e-9);
            for w in b.log_det_a.windows(2) {
                assert!((w[1].im - w[0].im).abs() < PI);
            }
        }
    }

    #[test]
    fn methods_agree_on_quadratic_models() {
        for kind in BuiltinKind::ALL {
            let m = builtin_model(kind, 2).unwrap();
            let x0 = PhasePoint::new(vec![0.4, -0.3], vec![1.1, 0.2]).unwrap();
            let opts = |meth| FlowOptions::default().with_method(meth).at(vec![0.7, 1.3]);
            let e = integrate_characteristics(&m, &x0, 1.3, &opts(FlowMethod::Exact)).unwrap();
            for meth in [FlowMethod::Rk4, FlowMethod::Adaptive] {
                let b = integrate_characteristics(&m, &x0, 1.3, &opts(meth)).unwrap();
                assert_eq!(b.times, e.times);
                for i in 0..b.len() {
                    assert_relative_eq!(b.points[i].q[1], e.points[i].q[1], epsilon = 1e-9);
                    assert_relative_eq!(b.action[i], e.action[i], epsilon = 1e-9);
                    assert!(linalg::max_abs(&(&b.frames[i].a - &e.frames[i].a)) < 1e-9);
                    assert!((b.log_det_a[i] - e.log_det_a[i]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn exact_requires_closed_form() {
        let err = integrate_characteristics(&quartic(), &PhasePoint::new_1d(0.0, 1.0), 1.0, &FlowOptions::default().with_method(FlowMethod::Exact));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn ehrenfest_examples() {
        let h = builtin_model(BuiltinKind::Harmonic, 1).unwrap();
        let b = integrate_characteristics(&h, &PhasePoint::new_1d(1.0, 0.0), 5.0, &FlowOptions::default()).unwrap();
        assert!(ehrenfest_guard(&b, Some(0.1)).is_empty());

        let f = builtin_model(BuiltinKind::Free, 1).unwrap();
        let b = integrate_characteristics(&f, &PhasePoint::new_1d(0.0, 1.0), 4.0, &FlowOptions::default()).unwrap();
        let w = ehrenfest_guard(&b, Some(0.1));
        assert_eq!(w.len(), 1);
        // ||[[1, 2t], [0, 1]]|| = t + sqrt(1 + t^2) reaches 10^{1/2} at t = (10 - 1) / (2 sqrt 10).
        let t_cross = 9.0 / (2.0 * 10f64.sqrt());
        assert!((w[0].t - t_cross).abs() < 2e-3);
        assert!(ehrenfest_guard(&b, None).is_empty());
    }

    #[test]
    fn riccati_residual_is_small_for_step_resolved_samples() {
        let b = integrate_characteristics(&quartic(), &PhasePoint::new_1d(0.8, -0.3), 1.0, &rk4()).unwrap();
        assert!(riccati_residual(&quartic(), &b).unwrap() < 1e-7);
    }

    #[test]
    fn siegel_rejects_bad_inputs() {
        let m = CMatrix::from_row_slice(1, 1, &[C64::new(1.0, -0.5)]);
        assert!(SiegelMatrix::new(m).is_err());
        let m = CMatrix::from_row_slice(2, 2, &[I, C64::new(1.0, 0.0), C64::new(0.0, 0.0), I]);
        assert!(SiegelMatrix::new(m).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn quartic_identities_and_energy(q in -1.0..1.0f64, p in -1.0..1.0f64, t in 0.05..1.0f64) {
            let m = quartic();
            let b = integrate_characteristics(&m, &PhasePoint::new_1d(q, p), t, &rk4()).unwrap();
            let j = symplectic_check(&b);
            prop_assert!(j < 1e-9);
            for f in b.frames.iter().step_by(50) {
                prop_assert!(f.residuals().unwrap().max() < 1e-8);
            }
            let h0 = m.value(&[q], &[p]);
            prop_assert!(energy_drift(&m, &b) <= 1e-9 * (1.0 + h0.abs()));
        }

        #[test]
        fn builtins_match_exact_flow(q in -2.0..2.0f64, p in -2.0..2.0f64, t in 0.0..2.0f64) {
            for kind in BuiltinKind::ALL {
                let m = builtin_model(kind, 1).unwrap();
                let x0 = PhasePoint::new_1d(q, p);
                let b = integrate_characteristics(&m, &x0, t, &rk4().at(vec![t])).unwrap();
                let e = m.exact(&x0, t).unwrap();
                let x = &b.points[b.last()];
                prop_assert!((x.q[0] - e.point.q[0]).abs() < 1e-10);
                prop_assert!((x.p[0] - e.point.p[0]).abs() < 1e-10);
                prop_assert!((b.action[b.last()] - e.action).abs() < 1e-10);
            }
        }
    }

    fn symplectic_check(b: &TrajectoryBundle) -> f64 {
        let j = linalg::symplectic_j(b.dim());
        b.frames
            .iter()
            .map(|f| {
                let m = f.jacobian();
                linalg::max_abs_real(&(m.transpose() * &j * &m - &j))
            })
            .fold(0.0, f64::max)
    }
}
