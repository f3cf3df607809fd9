//! Closed-form references for the three quadratic models with the chirped
//! Gaussian `psi0(x) = pi^{-1/4} exp(i (1 + i hbar) x^2 / (2 hbar))`.
//!
//! Several published displays carry typos. Each is available verbatim as
//! [`Reading::Literal`] and in a form validated against quadrature as
//! [`Reading::Corrected`]; [`deviations`] lists what differs and why.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use crate::models::{BuiltinKind, PhasePoint};

/// Which transcription of a display to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reading {
    Literal,
    Corrected,
}

/// Oracle value; `continued` marks evaluation at a removable singularity of the printed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluated {
    pub value: C64,
    pub continued: bool,
}

impl Evaluated {
    fn plain(value: C64) -> Self {
        Self { value, continued: false }
    }
}

/// One documented difference between a printed display and the adopted form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviation {
    pub id: String,
    pub object: String,
    pub printed: String,
    pub adopted: String,
    pub evidence: String,
}

const DEVIATIONS_JSON: &str = include_str!("../../../deviations.json");

/// The machine-readable deviations list shipped with the crate.
pub fn deviations() -> Vec<Deviation> {
    serde_json::from_str(DEVIATIONS_JSON).expect("deviations.json is valid")
}

fn check_hbar(hbar: f64) -> Result<()> {
    if !(hbar > 0.0) || !hbar.is_finite() {
        return Err(Error::Config(format!("hbar must be positive (got {hbar})")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and non-negative (got {t})")));
    }
    Ok(())
}

fn qp(x: &PhasePoint) -> Result<(f64, f64)> {
    if x.dim() != 1 {
        return Err(Error::Domain("closed-form oracles are one-dimensional".into()));
    }
    Ok((x.q[0], x.p[0]))
}

fn alpha0(hbar: f64) -> C64 {
    C64::new(1.0, hbar)
}

/// Transform of the initial state at `(q, p)`.
pub fn initial_phase_state(reading: Reading, x: &PhasePoint, hbar: f64) -> Result<C64> {
    check_hbar(hbar)?;
    let (q, p) = qp(x)?;
    let den = C64::new(1.0 + hbar, -1.0);
    let pre = hbar.powf(-0.25) * (1.0 / (PI * den)).sqrt();
    let cross = match reading {
        Reading::Literal => C64::new(q * q, p * q),
        Reading::Corrected => C64::new(q * q, -p * q),
    };
    let w = C64::new(q, -p);
    Ok(pre * (-cross / (2.0 * hbar)).exp() * (w * w / (2.0 * hbar * den)).exp())
}

/// Exact phase-space solution `Psi(q, p, t)`.
pub fn exact_phase_solution(kind: BuiltinKind, reading: Reading, x: &PhasePoint, t: f64, hbar: f64) -> Result<Evaluated> {
    check_hbar(hbar)?;
    check_time(t)?;
    let (q, p) = qp(x)?;
    let h = hbar;
    let w = C64::new(q, -p);
    let quarter = h.powf(-0.25);
    match kind {
        BuiltinKind::Free => {
            let num = w * (C64::new(-h, 1.0) * q - I * (1.0 + 2.0 * alpha0(h) * t) * p);
            let den = C64::new(1.0 - 2.0 * h * t, 1.0 + 2.0 * t + h);
            let pre_den = match reading {
                Reading::Literal => C64::new(1.0 + h, -1.0 + 2.0 * h * t),
                Reading::Corrected => C64::new(1.0 + 2.0 * t + h, -1.0 + 2.0 * h * t),
            };
            let pre = quarter * (1.0 / (PI * pre_den)).sqrt();
            Ok(Evaluated::plain(pre * (I / (2.0 * h) * num / den).exp()))
        }
        BuiltinKind::Linear => {
            let d = C64::new(1.0 + 2.0 * t + h, -1.0 + 2.0 * h * t);
            let (qq, pp) = (C64::new(q, 0.0), C64::new(p, 0.0));
            let t2 = t * t;
            let poly = 3.0 * (I * p * p - C64::new(1.0, 1.0) * p * q + h * p * q + q * q + I * h * q * q)
                - 6.0 * (-I * pp - I * p * p + h * p * p + qq + p * q + I * h * p * q) * t
                + 3.0 * (I + 2.0 * I * p - 2.0 * h * p - 2.0 * q - 2.0 * I * h * q) * t2
                + 2.0 * C64::new(-1.0 - h, 1.0) * t2 * t
                - alpha0(h) * t2 * t2;
            let pre = quarter * (1.0 / (PI * d)).sqrt();
            Ok(Evaluated::plain(pre * (I * poly / (6.0 * h * d)).exp()))
        }
        BuiltinKind::Harmonic => {
            let a0 = alpha0(h);
            let den0 = C64::new(1.0 + h, -1.0);
            let pre = C64::from_polar(1.0, -t) / (PI.sqrt() * h.powf(0.25) * den0.sqrt());
            let (s, c) = (2.0 * t).sin_cos();
            match reading {
                Reading::Corrected => {
                    let n = s * (-a0 * p - q) + c * (-p + a0 * q);
                    let arg = w * n / (den0 * C64::from_polar(1.0, 2.0 * t));
                    Ok(Evaluated::plain(pre * (I / (2.0 * h) * arg).exp()))
                }
                Reading::Literal => {
                    let lead = -a0 * p - q;
                    let cot_coef = C64::new(-p + q, h * p);
                    if s.abs() < 1e-12 {
                        // cot 2t is infinite; the form tends to w * cot_coef / (1 - i + hbar).
                        let arg = w * cot_coef / den0;
                        return Ok(Evaluated { value: pre * (I / (2.0 * h) * arg).exp(), continued: true });
                    }
                    let cot = c / s;
                    let arg = w * (lead + cot_coef * cot) / (den0 * (I + cot));
                    Ok(Evaluated::plain(pre * (I / (2.0 * h) * arg).exp()))
                }
            }
        }
    }
}

/// `sqrt(cos 2t + alpha0 sin 2t)` continued in t from 1 at t = 0.
///
/// The curve winds once around the origin per period pi and crosses the
/// negative real axis, from above, at t = pi/2 + k pi.
fn harmonic_root(t: f64, hbar: f64) -> C64 {
    let (s, c) = (2.0 * t).sin_cos();
    let f = c + alpha0(hbar) * s;
    let turns = ((t - PI / 2.0) / PI).ceil().max(0.0);
    C64::from_polar(f.norm().sqrt(), 0.5 * f.arg() + PI * turns)
}

/// Exact position-space solution `psi(x, t)`.
pub fn exact_position_solution(kind: BuiltinKind, x: f64, t: f64, hbar: f64) -> Result<C64> {
    check_hbar(hbar)?;
    check_time(t)?;
    let a0 = alpha0(hbar);
    let quarter = PI.powf(-0.25);
    Ok(match kind {
        BuiltinKind::Free => {
            let d = 1.0 + 2.0 * a0 * t;
            quarter / d.sqrt() * (I / (2.0 * hbar) * a0 / d * x * x).exp()
        }
        BuiltinKind::Linear => {
            let d = 1.0 + 2.0 * a0 * t;
            let u = (t * t + x) * (t * t + x);
            let ph = 0.5 * u / d - t * t * t / 3.0 - t * x;
            quarter / d.sqrt() * (I / hbar * ph).exp() * (-0.5 * u / d).exp()
        }
        BuiltinKind::Harmonic => {
            let (s, c) = (2.0 * t).sin_cos();
            let a = (a0 * c - s) / (a0 * s + c);
            quarter / harmonic_root(t, hbar) * (I / (2.0 * hbar) * a * x * x).exp()
        }
    })
}

/// Exact position-space propagator `K(x, y, t)`.
///
/// For the trap, the root of `sin 2t` is continued through focal points by
/// a factor `e^{-i pi/2}` per crossing.
pub fn exact_position_propagator(kind: BuiltinKind, reading: Reading, x: f64, y: f64, t: f64, hbar: f64) -> Result<C64> {
    check_hbar(hbar)?;
    check_time(t)?;
    if t == 0.0 {
        return Err(Error::Domain("the propagator is a delta distribution at t = 0".into()));
    }
    let free_pre = (4.0 * PI * I * hbar * t).sqrt().inv();
    Ok(match (kind, reading) {
        (BuiltinKind::Free, _) => free_pre * (I * (x - y) * (x - y) / (4.0 * hbar * t)).exp(),
        (BuiltinKind::Linear, Reading::Corrected) => {
            let ph = (x - y) * (x - y) / (4.0 * t) - t * (x + y) / 2.0 - t * t * t / 12.0;
            free_pre * (I * ph / hbar).exp()
        }
        (BuiltinKind::Linear, Reading::Literal) => {
            let pre = (-I / hbar * (t * t * t / 3.0 + t * x)).exp() / (2.0 * (2.0 * PI * I * hbar).sqrt());
            pre * (-(x - y + t * t) / (4.0 * I * hbar * t)).exp()
        }
        (BuiltinKind::Harmonic, _) => {
            let (s, c) = (2.0 * t).sin_cos();
            if s.abs() < 1e-12 {
                return Err(Error::Caustic { t, alpha: None });
            }
            let focal = (2.0 * t / PI).floor();
            let pre = (2.0 * PI * hbar * s.abs()).powf(-0.5) * C64::from_polar(1.0, -PI / 4.0 - PI / 2.0 * focal);
            pre * (I / (2.0 * hbar * s) * ((x * x + y * y) * c - 2.0 * x * y)).exp()
        }
    })
}

/// Printed anisotropy matrix `[[1, -t], [-t, 1 + 2it]]` contracted with d.
fn free_quadratic(d: [f64; 2], t: f64) -> C64 {
    d[0] * d[0] - 2.0 * t * d[0] * d[1] + C64::new(1.0, 2.0 * t) * d[1] * d[1]
}

/// Exact phase-space propagator `K(X, Y, t)`.
pub fn exact_kernel(kind: BuiltinKind, reading: Reading, x: &PhasePoint, y: &PhasePoint, t: f64, hbar: f64) -> Result<C64> {
    check_hbar(hbar)?;
    check_time(t)?;
    let (q, p) = qp(x)?;
    let (eta, xi) = qp(y)?;
    let norm = 1.0 / (2.0 * PI * hbar);
    let wide = C64::new(1.0, t);
    let quad_pre = I / (4.0 * wide);
    let (phase, pre) = match (kind, reading) {
        (BuiltinKind::Free, Reading::Literal) => {
            let d = [q - eta - 2.0 * t * xi, p - xi];
            (0.5 * (q * eta - p * xi) - t * q * xi + quad_pre * free_quadratic(d, t), wide.sqrt().inv())
        }
        (BuiltinKind::Free, Reading::Corrected) => {
            let d = [q - eta - 2.0 * t * xi, p - xi];
            (0.5 * (q * xi - p * eta) - t * p * xi + quad_pre * free_quadratic(d, t), wide.sqrt().inv())
        }
        (BuiltinKind::Linear, Reading::Literal) => {
            let d = [q - eta - 2.0 * t * xi + t * t, p - xi + t];
            let real = 2.0 / 3.0 * t.powi(3) - 2.0 * t * t * xi + t * (xi * xi - eta);
            (real + quad_pre * free_quadratic(d, t), wide.sqrt().inv())
        }
        (BuiltinKind::Linear, Reading::Corrected) => {
            let d = [q - eta - 2.0 * t * xi + t * t, p - xi + t];
            let real = 0.5 * (q * xi - p * eta) - 0.5 * t * q - t * p * xi + 0.5 * t * t * p - 0.5 * t * eta
                - 0.5 * t * t * xi
                + t.powi(3) / 6.0;
            (real + quad_pre * free_quadratic(d, t), wide.sqrt().inv())
        }
        (BuiltinKind::Harmonic, reading) => {
            let (s, c) = (2.0 * t).sin_cos();
            let (et, xt) = (eta * c + xi * s, xi * c - eta * s);
            let d = [q - et, p - xt];
            let pre = C64::from_polar(1.0, -t);
            match reading {
                Reading::Literal => {
                    let real = 0.25 * (xi * xi - eta * eta) * (4.0 * t).sin()
                        + 0.5 * xi * eta * ((4.0 * t).cos() - 1.0)
                        + 0.5 * xi * eta * (c * c - s * s)
                        + 0.5 * (xi * xi - eta * eta) * c * s
                        + 0.5 * q * (xi * c - eta * s)
                        - 0.5 * p * (eta * c + xi * s);
                    (real + quad_pre * free_quadratic(d, t), pre)
                }
                Reading::Corrected => {
                    let real = 0.5 * (q * xt - p * et);
                    (real + 0.25 * I * (d[0] * d[0] + d[1] * d[1]), pre)
                }
            }
        }
    };
    Ok(norm * pre * (I * phase / hbar).exp())
}

/// Transported manifold `p = slope q + offset`; a caustic error where it is vertical.
pub fn exact_manifold(kind: BuiltinKind, t: f64) -> Result<(f64, f64)> {
    check_time(t)?;
    match kind {
        BuiltinKind::Free => Ok((1.0 / (1.0 + 2.0 * t), 0.0)),
        BuiltinKind::Linear => Ok((1.0 / (1.0 + 2.0 * t), -t * (t + 1.0) / (1.0 + 2.0 * t))),
        BuiltinKind::Harmonic => {
            let (s, c) = (2.0 * t).sin_cos();
            if (c + s).abs() < 1e-14 {
                return Err(Error::Caustic { t, alpha: None });
            }
            Ok(((4.0 * t).cos() / ((c + s) * (c + s)), 0.0))
        }
    }
}

/// Solution `S(x, t)` of the Hamilton-Jacobi equation with `S(x, 0) = x^2/2`.
pub fn exact_phase_function(kind: BuiltinKind, x: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(match kind {
        BuiltinKind::Free => 0.5 * x * x / (1.0 + 2.0 * t),
        BuiltinKind::Linear => {
            (x * x - 2.0 * t * (1.0 + t) * x - (2.0 + t) * t.powi(3) / 3.0) / (2.0 * (1.0 + 2.0 * t))
        }
        BuiltinKind::Harmonic => {
            let (slope, _) = exact_manifold(kind, t)?;
            0.5 * slope * x * x
        }
    })
}

/// n-th time at which the trap manifold is vertical.
pub fn harmonic_vertical_time(reading: Reading, n: u32) -> f64 {
    let n = n as f64;
    match reading {
        Reading::Literal => PI / 2.0 * (n - 1.0 / 8.0),
        Reading::Corrected => PI / 2.0 * (n - 1.0 / 4.0),
    }
}

/// Anisotropy `Z(t)` from `Z(0) = i`. The printed form is shared by all kinds.
pub fn exact_anisotropy_z(kind: BuiltinKind, reading: Reading, t: f64) -> C64 {
    match (kind, reading) {
        (BuiltinKind::Harmonic, Reading::Corrected) => I,
        _ => I / C64::new(1.0, 2.0 * t),
    }
}

/// Double phase space anisotropy `Q(t)`, row-major 2 x 2.
pub fn exact_anisotropy_q(kind: BuiltinKind, reading: Reading, t: f64) -> [[C64; 2]; 2] {
    match (kind, reading) {
        (BuiltinKind::Harmonic, Reading::Corrected) => {
            let z = C64::new(0.0, 0.0);
            [[0.5 * I, z], [z, 0.5 * I]]
        }
        _ => {
            let f = I / (2.0 * C64::new(1.0, t));
            [[f, -t * f], [-t * f, f * C64::new(1.0, 2.0 * t)]]
        }
    }
}

/// Convenience bundle of the closed forms for one model and one value of hbar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub kind: BuiltinKind,
    pub hbar: f64,
}

impl OracleCase {
    pub fn new(kind: BuiltinKind, hbar: f64) -> Result<Self> {
        check_hbar(hbar)?;
        Ok(Self { kind, hbar })
    }

    pub fn phase_solution(&self, x: &PhasePoint, t: f64) -> Result<C64> {
        Ok(exact_phase_solution(self.kind, Reading::Corrected, x, t, self.hbar)?.value)
    }

    pub fn position_solution(&self, x: f64, t: f64) -> Result<C64> {
        exact_position_solution(self.kind, x, t, self.hbar)
    }

    pub fn kernel(&self, x: &PhasePoint, y: &PhasePoint, t: f64) -> Result<C64> {
        exact_kernel(self.kind, Reading::Corrected, x, y, t, self.hbar)
    }

    pub fn manifold(&self, t: f64) -> Result<(f64, f64)> {
        exact_manifold(self.kind, t)
    }

    pub fn phase_function(&self, x: f64, t: f64) -> Result<f64> {
        exact_phase_function(self.kind, x, t)
    }
}
