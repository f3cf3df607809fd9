//! Uniform tensor grids and complex-valued samples on them.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Uniform grid `min, min + h, ..., max` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min || n < 2 {
            return Err(Error::Config(format!("invalid axis [{min}, {max}] with {n} nodes")));
        }
        Ok(Self { min, max, n })
    }

    /// Axis with nodes spaced at most `h` apart.
    pub fn with_spacing(min: f64, max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
        }
        let n = ((max - min) / h).ceil() as usize + 1;
        Self::new(min, max, n.max(2))
    }

    /// Symmetric axis `[-half, half]`.
    pub fn symmetric(half: f64, n: usize) -> Result<Self> {
        Self::new(-half, half, n)
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weight of node i.
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.n {
            0.5 * h
        } else {
            h
        }
    }

    /// Index range of nodes inside `[lo, hi]`.
    pub fn range_within(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let h = self.spacing();
        let a = ((lo - self.min) / h).ceil().max(0.0) as usize;
        let b = (((hi - self.min) / h).floor() + 1.0).clamp(0.0, self.n as f64) as usize;
        a.min(b)..b
    }
}

/// Largest phase-grid spacing whose Gaussian-frame aliasing error stays below `eps`.
///
/// Trapezoid sums over base points of integrands carrying the `exp(-|X-Y|^2/4hbar)`
/// frame envelope alias at level `2 exp(-pi^2 hbar / h^2)`.
pub fn max_phase_spacing(hbar: f64, eps: f64) -> f64 {
    std::f64::consts::PI * hbar.sqrt() / (2.0 / eps).ln().sqrt()
}

/// Aliasing level used by the grid checks.
pub const FRAME_ALIASING_EPS: f64 = 1e-7;

/// Rejects phase grids coarser than [`max_phase_spacing`].
pub fn check_phase_spacing(axes: &[Axis], hbar: f64) -> Result<()> {
    let limit = max_phase_spacing(hbar, FRAME_ALIASING_EPS);
    for ax in axes {
        if ax.spacing() > limit * (1.0 + 1e-12) {
            return Err(Error::GridResolution { spacing: ax.spacing(), limit });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Samples over R^d.
    Position,
    /// Samples over R^2d, axes ordered (q_1..q_d, p_1..p_d).
    Phase,
}

/// Complex samples on a tensor grid; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    axes: Vec<Axis>,
    values: Vec<C64>,
    hbar: f64,
    domain: Domain,
    norm: f64,
}

#[derive(Serialize)]
struct AxisMeta<'a> {
    name: &'a str,
    min: f64,
    max: f64,
    n: usize,
}

#[derive(Serialize)]
struct FieldMeta<'a> {
    domain: Domain,
    hbar: f64,
    norm: f64,
    axes: Vec<AxisMeta<'a>>,
}

impl ComplexField {
    pub fn new(axes: Vec<Axis>, values: Vec<C64>, hbar: f64, domain: Domain) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::Config(format!("hbar must be positive, got {hbar}")));
        }
        if axes.is_empty() || (domain == Domain::Phase && axes.len() % 2 != 0) {
            return Err(Error::Domain(format!("{} axes do not fit a {domain:?} field", axes.len())));
        }
        let len: usize = axes.iter().map(|a| a.n).product();
        if len != values.len() {
            return Err(Error::Domain(format!("expected {len} samples, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        let mut f = Self { axes, values, hbar, domain, norm: 0.0 };
        f.refresh_norm();
        Ok(f)
    }

    /// Samples `f` at every node, in parallel.
    pub fn from_fn<F>(axes: Vec<Axis>, hbar: f64, domain: Domain, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> C64 + Sync,
    {
        let len: usize = axes.iter().map(|a| a.n).product();
        let values: Vec<C64> = (0..len)
            .into_par_iter()
            .map(|k| f(&coords_of(&axes, k)))
            .collect();
        Self::new(axes, values, hbar, domain)
    }

    pub fn zeros(axes: Vec<Axis>, hbar: f64, domain: Domain) -> Result<Self> {
        let len: usize = axes.iter().map(|a| a.n).product();
        Self::new(axes, vec![C64::new(0.0, 0.0); len], hbar, domain)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Configuration-space dimension d.
    pub fn dim(&self) -> usize {
        match self.domain {
            Domain::Position => self.axes.len(),
            Domain::Phase => self.axes.len() / 2,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trapezoid L2 norm, refreshed on every mutation.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn set_values(&mut self, values: Vec<C64>) -> Result<()> {
        let f = Self::new(self.axes.clone(), values, self.hbar, self.domain)?;
        *self = f;
        Ok(())
    }

    pub fn map_values<F: Fn(&[f64], C64) -> C64>(&mut self, f: F) {
        for k in 0..self.values.len() {
            let x = coords_of(&self.axes, k);
            self.values[k] = f(&x, self.values[k]);
        }
        self.refresh_norm();
    }

    fn refresh_norm(&mut self) {
        let s: f64 = (0..self.values.len()).map(|k| self.weight(k) * self.values[k].norm_sqr()).sum();
        self.norm = s.sqrt();
    }

    pub fn coords(&self, k: usize) -> Vec<f64> {
        coords_of(&self.axes, k)
    }

    pub fn multi_index(&self, k: usize) -> Vec<usize> {
        multi_index_of(&self.axes, k)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    /// Product trapezoid weight of node k.
    pub fn weight(&self, k: usize) -> f64 {
        let idx = self.multi_index(k);
        idx.iter().zip(&self.axes).map(|(&i, a)| a.weight(i)).product()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| self.weight(k)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest modulus over boundary nodes.
    pub fn boundary_max(&self) -> f64 {
        (0..self.values.len())
            .filter(|&k| {
                self.multi_index(k).iter().zip(&self.axes).any(|(&i, a)| i == 0 || i + 1 == a.n)
            })
            .map(|k| self.values[k].norm())
            .fold(0.0, f64::max)
    }

    /// Rejects fields that have not decayed below `rel` of their peak at the boundary.
    pub fn check_decay(&self, rel: f64) -> Result<()> {
        let peak = self.max_abs();
        let edge = self.boundary_max();
        if peak > 0.0 && edge > rel * peak {
            return Err(Error::Truncation { mass: edge / peak, limit: rel });
        }
        Ok(())
    }

    /// Same check on the density `|value|^2`.
    pub fn check_density_decay(&self, rel: f64) -> Result<()> {
        let peak = self.max_abs();
        let edge = self.boundary_max();
        let ratio = if peak > 0.0 { (edge / peak).powi(2) } else { 0.0 };
        if ratio > rel {
            return Err(Error::Truncation { mass: ratio, limit: rel });
        }
        Ok(())
    }

    /// Trapezoid inner product `<self, other>` (conjugate-linear in self).
    pub fn inner(&self, other: &ComplexField) -> Result<C64> {
        self.same_grid(other)?;
        Ok((0..self.values.len())
            .map(|k| self.values[k].conj() * other.values[k] * self.weight(k))
            .sum())
    }

    /// Trapezoid L2 norm of `self - other`.
    pub fn l2_distance(&self, other: &ComplexField) -> Result<f64> {
        self.same_grid(other)?;
        let s: f64 = (0..self.values.len())
            .map(|k| (self.values[k] - other.values[k]).norm_sqr() * self.weight(k))
            .sum();
        Ok(s.sqrt())
    }

    fn same_grid(&self, other: &ComplexField) -> Result<()> {
        if self.axes != other.axes || self.domain != other.domain {
            return Err(Error::Domain("fields live on different grids".into()));
        }
        Ok(())
    }

    /// Column names of the CSV dump.
    pub fn axis_names(&self) -> Vec<String> {
        let d = self.dim();
        match (self.domain, d) {
            (Domain::Position, 1) => vec!["x".into()],
            (Domain::Phase, 1) => vec!["q".into(), "p".into()],
            (Domain::Position, _) => (1..=d).map(|i| format!("x{i}")).collect(),
            (Domain::Phase, _) => (1..=d)
                .map(|i| format!("q{i}"))
                .chain((1..=d).map(|i| format!("p{i}")))
                .collect(),
        }
    }

    /// CSV header: axis coordinates, then `re,im`.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = self.axis_names();
        h.push("re".into());
        h.push("im".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        let mut rec: Vec<String> = Vec::with_capacity(self.axes.len() + 2);
        for (k, v) in self.values.iter().enumerate() {
            rec.clear();
            rec.extend(self.coords(k).iter().map(|x| x.to_string()));
            rec.push(v.re.to_string());
            rec.push(v.im.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// One-line JSON metadata record.
    pub fn metadata_json(&self) -> Result<String> {
        let names = self.axis_names();
        let meta = FieldMeta {
            domain: self.domain,
            hbar: self.hbar,
            norm: self.norm,
            axes: self
                .axes
                .iter()
                .zip(&names)
                .map(|(a, n)| AxisMeta { name: n, min: a.min, max: a.max, n: a.n })
                .collect(),
        };
        Ok(serde_json::to_string(&meta)?)
    }
}

pub(crate) fn multi_index_of(axes: &[Axis], mut k: usize) -> Vec<usize> {
    let mut idx = vec![0; axes.len()];
    for (slot, a) in idx.iter_mut().zip(axes).rev() {
        *slot = k % a.n;
        k /= a.n;
    }
    idx
}

pub(crate) fn coords_of(axes: &[Axis], k: usize) -> Vec<f64> {
    multi_index_of(axes, k).iter().zip(axes).map(|(&i, a)| a.point(i)).collect()
}

/// Flat indices of the sub-box `ranges[0] x ranges[1] x ...`.
pub(crate) fn box_indices(axes: &[Axis], ranges: &[std::ops::Range<usize>]) -> Vec<usize> {
    let mut out = vec![0usize];
    for (a, r) in axes.iter().zip(ranges) {
        let mut next = Vec::with_capacity(out.len() * r.len());
        for &base in &out {
            for i in r.clone() {
                next.push(base * a.n + i);
            }
        }
        out = next;
    }
    out
}
