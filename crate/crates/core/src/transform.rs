//! Wave packet (FBI) transform, its adjoint, and the Gaussian frame identities.
//!
//! With the isotropic packet
//! `G_X(x) = (pi hbar)^{-d/4} exp{(i/hbar)(p.q/2 + p.(x-q) + (i/2)|x-q|^2)}`
//! the transform is `Psi(X) = (2 pi hbar)^{-d/2} <G_X, psi>` and the adjoint
//! superposes packets with weight `Psi`. All integrals are trapezoid sums on
//! uniform grids; grid adequacy is measured, not assumed.

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{box_indices, check_phase_spacing, Axis, ComplexField, Domain};
use crate::linalg::{C64, I};
use crate::models::{dot, PhasePoint};

/// Packets are summed only where `|x - q| <= WINDOW * sqrt(hbar)`; the envelope there is `e^{-72}`.
pub const WINDOW: f64 = 12.0;

/// Boundary decay required of a position-space input, relative to its peak.
pub const POSITION_DECAY: f64 = 1e-12;

/// Boundary decay of `|Psi|^2` required of a phase-space input, relative to its peak.
pub const PHASE_DECAY: f64 = 1e-10;

/// Isotropic Gaussian packet centred at `center`, evaluated at `x`.
pub fn gaussian_packet(center: &PhasePoint, hbar: f64, x: &[f64]) -> C64 {
    let d = center.dim();
    let mut dist2 = 0.0;
    let mut lin = 0.0;
    for k in 0..d {
        let dx = x[k] - center.q[k];
        dist2 += dx * dx;
        lin += center.p[k] * dx;
    }
    let phase = 0.5 * dot(&center.p, &center.q) + lin;
    let norm = (PI * hbar).powf(-0.25 * d as f64);
    C64::from_polar(norm * (-0.5 * dist2 / hbar).exp(), phase / hbar)
}

/// `<G_X, G_Y> = exp{(i/hbar)(X.JY/2 + (i/4)|X - Y|^2)}`.
pub fn overlap(x: &PhasePoint, y: &PhasePoint, hbar: f64) -> C64 {
    C64::from_polar((-0.25 * x.distance2(y) / hbar).exp(), 0.5 * x.symplectic_dot(y) / hbar)
}

/// Reproducing kernel of the transform's range.
pub fn bergmann_kernel(x: &PhasePoint, y: &PhasePoint, hbar: f64) -> C64 {
    overlap(x, y, hbar) * (2.0 * PI * hbar).powf(-(x.dim() as f64))
}

fn phase_point(coords: &[f64]) -> PhasePoint {
    PhasePoint::from_stacked(coords)
}

/// `Psi(q, p) = (2 pi hbar)^{-d/2} int conj(G_(q,p)(x)) psi(x) dx`.
pub fn wave_packet_transform(psi: &ComplexField, phase_axes: &[Axis]) -> Result<ComplexField> {
    if psi.domain() != Domain::Position {
        return Err(Error::Domain("wave packet transform expects a position-space field".into()));
    }
    let d = psi.dim();
    if phase_axes.len() != 2 * d {
        return Err(Error::Domain(format!("need {} phase axes, got {}", 2 * d, phase_axes.len())));
    }
    let hbar = psi.hbar();
    psi.check_decay(POSITION_DECAY)?;
    check_phase_spacing(phase_axes, hbar)?;

    let grid = ComplexField::zeros(phase_axes.to_vec(), hbar, Domain::Phase)?;
    let points: Vec<PhasePoint> = (0..grid.len()).map(|k| phase_point(&grid.coords(k))).collect();
    let values = transform_at(psi, &points)?;
    ComplexField::new(phase_axes.to_vec(), values, hbar, Domain::Phase)
}

/// Transform evaluated at arbitrary phase points, without a grid.
pub fn transform_at(psi: &ComplexField, points: &[PhasePoint]) -> Result<Vec<C64>> {
    if psi.domain() != Domain::Position {
        return Err(Error::Domain("wave packet transform expects a position-space field".into()));
    }
    let d = psi.dim();
    if let Some(x) = points.iter().find(|x| x.dim() != d) {
        return Err(Error::Domain(format!("phase point of dimension {} for a {d}-dimensional field", x.dim())));
    }
    let hbar = psi.hbar();
    let radius = WINDOW * hbar.sqrt();
    let pre = (2.0 * PI * hbar).powf(-0.5 * d as f64);
    let weights = psi.weights();
    Ok(points
        .par_iter()
        .map(|x0| {
            let ranges: Vec<_> = (0..d)
                .map(|i| psi.axes()[i].range_within(x0.q[i] - radius, x0.q[i] + radius))
                .collect();
            let mut acc = C64::new(0.0, 0.0);
            for j in box_indices(psi.axes(), &ranges) {
                let x = psi.coords(j);
                acc += gaussian_packet(x0, hbar, &x).conj() * psi.values()[j] * weights[j];
            }
            acc * pre
        })
        .collect())
}

/// `psi(x) = (2 pi hbar)^{-d/2} int Psi(q, p) G_(q,p)(x) dq dp`.
pub fn inverse_transform(big: &ComplexField, position_axes: &[Axis]) -> Result<ComplexField> {
    if big.domain() != Domain::Phase {
        return Err(Error::Domain("inverse transform expects a phase-space field".into()));
    }
    let d = big.dim();
    if position_axes.len() != d {
        return Err(Error::Domain(format!("need {d} position axes, got {}", position_axes.len())));
    }
    let hbar = big.hbar();
    big.check_density_decay(PHASE_DECAY)?;
    check_phase_spacing(big.axes(), hbar)?;

    let radius = WINDOW * hbar.sqrt();
    let pre = (2.0 * PI * hbar).powf(-0.5 * d as f64);
    let weights = big.weights();
    let out = ComplexField::zeros(position_axes.to_vec(), hbar, Domain::Position)?;
    let values: Vec<C64> = (0..out.len())
        .into_par_iter()
        .map(|k| {
            let x = out.coords(k);
            let ranges: Vec<_> = (0..2 * d)
                .map(|i| {
                    let ax = big.axes()[i];
                    if i < d {
                        ax.range_within(x[i] - radius, x[i] + radius)
                    } else {
                        0..ax.n
                    }
                })
                .collect();
            let mut acc = C64::new(0.0, 0.0);
            for j in box_indices(big.axes(), &ranges) {
                let v = big.values()[j];
                if v.norm_sqr() == 0.0 {
                    continue;
                }
                let x0 = phase_point(&big.coords(j));
                acc += gaussian_packet(&x0, hbar, &x) * v * weights[j];
            }
            acc * pre
        })
        .collect();
    ComplexField::new(position_axes.to_vec(), values, hbar, Domain::Position)
}

/// Max over interior nodes of `|((q - ip)/2) Psi + hbar dPsi/dq - i hbar dPsi/dp|`
/// with central differences, relative to `max |Psi|`.
pub fn fock_bargmann_residual(big: &ComplexField) -> Result<f64> {
    if big.domain() != Domain::Phase {
        return Err(Error::Domain("Fock-Bargmann residual needs a phase-space field".into()));
    }
    let peak = big.max_abs();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let d = big.dim();
    let hbar = big.hbar();
    let axes = big.axes();
    let worst = (0..big.len())
        .into_par_iter()
        .filter_map(|k| {
            let idx = big.multi_index(k);
            if idx.iter().zip(axes).any(|(&i, a)| i == 0 || i + 1 == a.n) {
                return None;
            }
            let x = big.coords(k);
            let v = big.values()[k];
            let diff = |axis: usize| {
                let mut up = idx.clone();
                let mut dn = idx.clone();
                up[axis] += 1;
                dn[axis] -= 1;
                (big.values()[big.flat_index(&up)] - big.values()[big.flat_index(&dn)])
                    / (2.0 * axes[axis].spacing())
            };
            let mut r = 0.0f64;
            for i in 0..d {
                let res = C64::new(x[i], -x[d + i]) * 0.5 * v + hbar * diff(i) - I * hbar * diff(d + i);
                r = r.max(res.norm());
            }
            Some(r)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst / peak)
}

/// Smallest box containing the nodes where `|Psi|^2 > rel * max |Psi|^2`, padded by `pad`.
pub fn support_box(big: &ComplexField, rel: f64, pad: f64) -> Vec<(f64, f64)> {
    let peak2 = big.max_abs().powi(2);
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); big.axes().len()];
    for (k, v) in big.values().iter().enumerate() {
        if v.norm_sqr() > rel * peak2 {
            for (b, x) in bounds.iter_mut().zip(big.coords(k)) {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
        }
    }
    bounds.into_iter().map(|(lo, hi)| (lo - pad, hi + pad)).collect()
}

/// Husimi density next to the Gaussian-smoothed Wigner function on one phase grid.
#[derive(Debug, Clone)]
pub struct HusimiCheck {
    pub axes: Vec<Axis>,
    pub husimi: Vec<f64>,
    pub convolved_wigner: Vec<f64>,
    pub max_diff: f64,
    /// `max_diff` relative to the Husimi peak.
    pub rel_diff: f64,
}

/// Compares `|W psi|^2` with `g * Wigner(psi)`, `g(q, p) = (pi hbar)^{-1} e^{-(q^2+p^2)/hbar}` (d = 1).
///
/// The Wigner function is sampled at the position nodes with lag `y = 2k dx`,
/// so `psi(x +- y/2)` falls on grid nodes. Its p-dependence is sampled on an
/// internal grid fine enough for the smoothing kernel and wide enough to
/// cover the phase grid plus six kernel widths.
pub fn husimi_check(psi: &ComplexField, phase_axes: &[Axis]) -> Result<HusimiCheck> {
    if psi.domain() != Domain::Position || psi.dim() != 1 || phase_axes.len() != 2 {
        return Err(Error::Domain("Husimi check is implemented for d = 1 only".into()));
    }
    let hbar = psi.hbar();
    let big = wave_packet_transform(psi, phase_axes)?;
    let husimi: Vec<f64> = big.values().iter().map(|v| v.norm_sqr()).collect();

    let xs = psi.axes()[0];
    let dx = xs.spacing();
    let vals = psi.values();
    let (qa, pa) = (phase_axes[0], phase_axes[1]);
    let width = 6.0 * hbar.sqrt();
    let dp = pa.spacing().min(0.1 * hbar.sqrt());
    let paux = Axis::with_spacing(pa.min - width, pa.max + width, dp)?;
    let pnodes = paux.points();
    let xj: Vec<usize> = xs.range_within(qa.min - width, qa.max + width).collect();

    let peak = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let alive: Vec<bool> = vals.iter().map(|v| v.norm() > 1e-17 * peak).collect();
    let n = xs.n;
    let wigner: Vec<Vec<f64>> = xj
        .par_iter()
        .map(|&j| {
            let kmax = j.min(n - 1 - j);
            let c: Vec<C64> = (0..=kmax)
                .map(|k| {
                    if alive[j + k] && alive[j - k] {
                        vals[j + k] * vals[j - k].conj()
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect();
            let last = c.iter().rposition(|z| z.norm_sqr() > 0.0).unwrap_or(0);
            pnodes
                .iter()
                .map(|&p| {
                    let step = C64::from_polar(1.0, -2.0 * p * dx / hbar);
                    let mut rot = step;
                    let mut s = C64::new(0.0, 0.0);
                    for ck in &c[1..=last.max(1).min(kmax)] {
                        s += ck * rot;
                        rot *= step;
                    }
                    let total = if kmax == 0 { c[0].re } else { c[0].re + 2.0 * s.re };
                    total * 2.0 * dx / (2.0 * PI * hbar)
                })
                .collect()
        })
        .collect();

    let g = |u: f64| (-u * u / hbar).exp() / (PI * hbar).sqrt();
    let xw: Vec<f64> = xj.iter().map(|&j| xs.weight(j)).collect();
    let pw: Vec<f64> = (0..paux.n).map(|m| paux.weight(m)).collect();
    let qnodes = qa.points();
    let outp = pa.points();
    let convolved: Vec<f64> = qnodes
        .par_iter()
        .flat_map_iter(|&q| {
            let mut row = vec![0.0; pnodes.len()];
            for (a, &j) in xj.iter().enumerate() {
                let w = g(q - xs.point(j)) * xw[a];
                if w < 1e-300 {
                    continue;
                }
                for (r, wv) in row.iter_mut().zip(&wigner[a]) {
                    *r += w * wv;
                }
            }
            let out: Vec<f64> = outp
                .iter()
                .map(|&p| {
                    pnodes.iter().zip(&row).zip(&pw).map(|((&pm, &r), &w)| g(p - pm) * r * w).sum()
                })
                .collect();
            out.into_iter()
        })
        .collect();

    let max_diff = husimi.iter().zip(&convolved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let hpeak = husimi.iter().copied().fold(0.0, f64::max);
    Ok(HusimiCheck {
        axes: phase_axes.to_vec(),
        husimi,
        convolved_wigner: convolved,
        max_diff,
        rel_diff: if hpeak > 0.0 { max_diff / hpeak } else { max_diff },
    })
}
