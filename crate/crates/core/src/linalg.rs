//! Small dense linear-algebra helpers shared by the flow and kernel code.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Standard symplectic matrix `[[0, I], [-I, 0]]` of size 2d.
pub fn symplectic_j(d: usize) -> RMatrix {
    let mut j = RMatrix::zeros(2 * d, 2 * d);
    for k in 0..d {
        j[(k, d + k)] = 1.0;
        j[(d + k, k)] = -1.0;
    }
    j
}

pub fn complexify(m: &RMatrix) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

pub fn real_part(m: &CMatrix) -> RMatrix {
    m.map(|z| z.re)
}

pub fn imag_part(m: &CMatrix) -> RMatrix {
    m.map(|z| z.im)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_real(m: &RMatrix) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn inverse(m: &CMatrix, what: &str) -> Result<CMatrix> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Eigenvalues of a complex square matrix.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    match m.nrows() {
        0 => Ok(Vec::new()),
        1 => Ok(vec![m[(0, 0)]]),
        _ => m
            .eigenvalues()
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Singular("eigenvalue iteration did not converge".into())),
    }
}

/// Smallest eigenvalue of the symmetric part of a real matrix.
pub fn min_sym_eigenvalue(m: &RMatrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Log-determinant as a sum of principal logs of the eigenvalues.
///
/// Continuous in the matrix whenever all eigenvalues stay in the open right
/// half-plane, which is the case for `I - iZ` with `Im Z` positive definite.
pub fn log_det_right_half_plane(m: &CMatrix) -> Result<C64> {
    let eig = eigenvalues(m)?;
    if let Some(bad) = eig.iter().find(|l| l.re <= 0.0) {
        return Err(Error::Domain(format!(
            "eigenvalue {bad} not in the right half-plane"
        )));
    }
    Ok(eig.iter().map(|l| l.ln()).sum())
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}
