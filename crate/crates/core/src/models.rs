//! Hamiltonians `H(q, p) = |p|^2 + V(q)` and their closed-form flows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{RMatrix, C64};

/// A point `(q, p)` of the 2d-dimensional phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(Error::Domain(format!(
                "phase point needs equal non-empty q and p (got {} and {})",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("phase point has non-finite entries".into()));
        }
        Ok(Self { q, p })
    }

    pub fn new_1d(q: f64, p: f64) -> Self {
        Self { q: vec![q], p: vec![p] }
    }

    /// Splits a `(q, p)` stacked vector of length 2d.
    pub fn from_stacked(x: &[f64]) -> Self {
        let d = x.len() / 2;
        Self { q: x[..d].to_vec(), p: x[d..].to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }

    /// `X . J Y = q . xi - p . eta` for `X = (q, p)`, `Y = (eta, xi)`.
    pub fn symplectic_dot(&self, other: &PhasePoint) -> f64 {
        dot(&self.q, &other.p) - dot(&self.p, &other.q)
    }

    pub fn distance2(&self, other: &PhasePoint) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closed-form state of a trajectory at time t.
#[derive(Debug, Clone)]
pub struct ExactState {
    pub point: PhasePoint,
    /// Flow Jacobian `d X_t / d X_0`, rows and columns ordered `(q, p)`.
    pub jacobian: RMatrix,
    pub action: f64,
    /// Continuous logarithm of `det A(t)` in the Hamiltonian gauge.
    pub log_det_a: C64,
}

/// Evaluator of H, its gradient and Hessian.
///
/// Gradients are written as `(dH/dq, dH/dp)`; Hessians as a row-major
/// 2d x 2d block matrix `[[H_qq, H_qp], [H_pq, H_pp]]`.
pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64], p: &[f64]) -> f64;
    fn gradient(&self, q: &[f64], p: &[f64], out: &mut [f64]);
    fn hessian(&self, q: &[f64], p: &[f64], out: &mut [f64]);

    /// Closed-form flow, when known.
    fn exact(&self, _x0: &PhasePoint, _t: f64) -> Option<ExactState> {
        None
    }

    fn has_exact_flow(&self) -> bool {
        false
    }

    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinKind {
    Free,
    Linear,
    Harmonic,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 3] = [BuiltinKind::Free, BuiltinKind::Linear, BuiltinKind::Harmonic];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinKind::Free => "free",
            BuiltinKind::Linear => "linear",
            BuiltinKind::Harmonic => "harmonic",
        }
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(BuiltinKind::Free),
            "linear" => Ok(BuiltinKind::Linear),
            "harmonic" => Ok(BuiltinKind::Harmonic),
            other => Err(Error::Config(format!(
                "model.kind: unknown model `{other}` (expected free, linear, harmonic or polynomial)"
            ))),
        }
    }
}

/// One term `coeff * q^qpow * p^ppow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub qpow: u32,
    pub ppow: u32,
    pub coeff: f64,
}

impl Monomial {
    pub fn new(qpow: u32, ppow: u32, coeff: f64) -> Self {
        Self { qpow, ppow, coeff }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Builtin(BuiltinKind),
    Polynomial(Vec<Monomial>),
}

/// Built-in sub-quadratic models and d = 1 polynomial Hamiltonians.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    dim: usize,
    repr: Repr,
}

pub const MAX_POLY_DEGREE: u32 = 4;

pub fn builtin_model(kind: BuiltinKind, d: usize) -> Result<HamiltonianModel> {
    if d == 0 {
        return Err(Error::Config("model dimension must be at least 1".into()));
    }
    Ok(HamiltonianModel { dim: d, repr: Repr::Builtin(kind) })
}

/// Polynomial Hamiltonian in one degree of freedom, total degree at most 4.
pub fn polynomial_model(terms: &[Monomial]) -> Result<HamiltonianModel> {
    for t in terms {
        if !t.coeff.is_finite() {
            return Err(Error::Model(format!("non-finite coefficient in {t:?}")));
        }
        if t.qpow + t.ppow > MAX_POLY_DEGREE {
            return Err(Error::Model(format!(
                "term q^{} p^{} exceeds total degree {MAX_POLY_DEGREE}",
                t.qpow, t.ppow
            )));
        }
    }
    Ok(HamiltonianModel { dim: 1, repr: Repr::Polynomial(terms.to_vec()) })
}

impl HamiltonianModel {
    pub fn builtin_kind(&self) -> Option<BuiltinKind> {
        match self.repr {
            Repr::Builtin(k) => Some(k),
            Repr::Polynomial(_) => None,
        }
    }

    /// Whether the Hessian is constant, so frames do not depend on the base point.
    pub fn is_quadratic(&self) -> bool {
        match &self.repr {
            Repr::Builtin(_) => true,
            Repr::Polynomial(terms) => terms.iter().all(|t| t.qpow + t.ppow <= 2),
        }
    }
}

fn powi(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

/// d^k/dx^k x^n evaluated at x.
fn dpow(x: f64, n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut c = 1.0;
    for j in 0..k {
        c *= (n - j) as f64;
    }
    c * powi(x, n - k)
}

impl Hamiltonian for HamiltonianModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        match &self.repr {
            Repr::Builtin(kind) => q
                .iter()
                .zip(p)
                .map(|(&qk, &pk)| {
                    pk * pk
                        + match kind {
                            BuiltinKind::Free => 0.0,
                            BuiltinKind::Linear => qk,
                            BuiltinKind::Harmonic => qk * qk,
                        }
                })
                .sum(),
            Repr::Polynomial(terms) => terms
                .iter()
                .map(|t| t.coeff * powi(q[0], t.qpow) * powi(p[0], t.ppow))
                .sum(),
        }
    }

    fn gradient(&self, q: &[f64], p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.repr {
            Repr::Builtin(kind) => {
                for k in 0..d {
                    out[k] = match kind {
                        BuiltinKind::Free => 0.0,
                        BuiltinKind::Linear => 1.0,
                        BuiltinKind::Harmonic => 2.0 * q[k],
                    };
                    out[d + k] = 2.0 * p[k];
                }
            }
            Repr::Polynomial(terms) => {
                let (x, y) = (q[0], p[0]);
                out[0] = terms.iter().map(|t| t.coeff * dpow(x, t.qpow, 1) * powi(y, t.ppow)).sum();
                out[1] = terms.iter().map(|t| t.coeff * powi(x, t.qpow) * dpow(y, t.ppow, 1)).sum();
            }
        }
    }

    fn hessian(&self, q: &[f64], p: &[f64], out: &mut [f64]) {
        let n = 2 * self.dim;
        out[..n * n].fill(0.0);
        match &self.repr {
            Repr::Builtin(kind) => {
                let d = self.dim;
                for k in 0..d {
                    if *kind == BuiltinKind::Harmonic {
                        out[k * n + k] = 2.0;
                    }
                    out[(d + k) * n + d + k] = 2.0;
                }
            }
            Repr::Polynomial(terms) => {
                let (x, y) = (q[0], p[0]);
                let h = |a: u32, b: u32| -> f64 {
                    terms.iter().map(|t| t.coeff * dpow(x, t.qpow, a) * dpow(y, t.ppow, b)).sum()
                };
                out[0] = h(2, 0);
                out[1] = h(1, 1);
                out[2] = out[1];
                out[3] = h(0, 2);
            }
        }
    }

    fn exact(&self, x0: &PhasePoint, t: f64) -> Option<ExactState> {
        let Repr::Builtin(kind) = self.repr else {
            return None;
        };
        let d = self.dim;
        let (c, s) = ((2.0 * t).cos(), (2.0 * t).sin());
        let mut q = vec![0.0; d];
        let mut p = vec![0.0; d];
        let mut action = 0.0;
        for k in 0..d {
            let (qk, pk) = (x0.q[k], x0.p[k]);
            match kind {
                BuiltinKind::Free => {
                    q[k] = qk + 2.0 * t * pk;
                    p[k] = pk;
                    action += pk * pk * t;
                }
                BuiltinKind::Linear => {
                    q[k] = qk + 2.0 * t * pk - t * t;
                    p[k] = pk - t;
                    action += (pk * pk - qk) * t - 2.0 * pk * t * t + 2.0 / 3.0 * t * t * t;
                }
                BuiltinKind::Harmonic => {
                    q[k] = qk * c + pk * s;
                    p[k] = -qk * s + pk * c;
                    action += 0.25 * (pk * pk - qk * qk) * (4.0 * t).sin()
                        + 0.5 * pk * qk * ((4.0 * t).cos() - 1.0);
                }
            }
        }
        let (a, b, cc, e) = match kind {
            BuiltinKind::Free | BuiltinKind::Linear => (1.0, 2.0 * t, 0.0, 1.0),
            BuiltinKind::Harmonic => (c, s, -s, c),
        };
        let mut jac = RMatrix::zeros(2 * d, 2 * d);
        for k in 0..d {
            jac[(k, k)] = a;
            jac[(k, d + k)] = b;
            jac[(d + k, k)] = cc;
            jac[(d + k, d + k)] = e;
        }
        let per_dim = match kind {
            BuiltinKind::Free | BuiltinKind::Linear => C64::new(1.0, 2.0 * t).ln(),
            BuiltinKind::Harmonic => C64::new(0.0, 2.0 * t),
        };
        Some(ExactState {
            point: PhasePoint { q, p },
            jacobian: jac,
            action,
            log_det_a: per_dim * d as f64,
        })
    }

    fn has_exact_flow(&self) -> bool {
        matches!(self.repr, Repr::Builtin(_))
    }

    fn label(&self) -> String {
        match &self.repr {
            Repr::Builtin(k) => k.name().to_string(),
            Repr::Polynomial(terms) => {
                let parts: Vec<String> = terms
                    .iter()
                    .map(|t| format!("{}*q^{}*p^{}", t.coeff, t.qpow, t.ppow))
                    .collect();
                format!("polynomial({})", parts.join(" + "))
            }
        }
    }
}

/// Serializable model description (`model.kind`, `model.coeffs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKindSpec,
    /// `[qpow, ppow, coeff]` triples; polynomial models only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<[f64; 3]>>,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindSpec {
    Free,
    Linear,
    Harmonic,
    Polynomial,
}

impl ModelSpec {
    pub fn builtin(kind: BuiltinKind) -> Self {
        let kind = match kind {
            BuiltinKind::Free => ModelKindSpec::Free,
            BuiltinKind::Linear => ModelKindSpec::Linear,
            BuiltinKind::Harmonic => ModelKindSpec::Harmonic,
        };
        Self { kind, coeffs: None, dim: 1 }
    }

    pub fn build(&self) -> Result<HamiltonianModel> {
        let kind = match self.kind {
            ModelKindSpec::Free => BuiltinKind::Free,
            ModelKindSpec::Linear => BuiltinKind::Linear,
            ModelKindSpec::Harmonic => BuiltinKind::Harmonic,
            ModelKindSpec::Polynomial => {
                if self.dim != 1 {
                    return Err(Error::Config("model.dim: polynomial models are one-dimensional".into()));
                }
                let coeffs = self.coeffs.as_ref().ok_or_else(|| {
                    Error::Config("model.coeffs: required for polynomial models".into())
                })?;
                let mut terms = Vec::with_capacity(coeffs.len());
                for &[qp, pp, c] in coeffs {
                    if qp < 0.0 || pp < 0.0 || qp.fract() != 0.0 || pp.fract() != 0.0 {
                        return Err(Error::Config(format!(
                            "model.coeffs: powers must be non-negative integers (got {qp}, {pp})"
                        )));
                    }
                    terms.push(Monomial::new(qp as u32, pp as u32, c));
                }
                return polynomial_model(&terms);
            }
        };
        if self.coeffs.is_some() {
            return Err(Error::Config(format!("model.coeffs: not accepted by the {kind} model")));
        }
        builtin_model(kind, self.dim)
    }
}
