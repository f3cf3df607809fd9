//! Fixtures shared by the criterion benches in `benches/`.

use phasewave_core::{wave_packet_transform, Axis, ComplexField, Result, WkbData};

/// Chirped Gaussian at `hbar` on `[-8, 8]` with spacing `dx`.
pub fn chirp_position(hbar: f64, dx: f64) -> Result<ComplexField> {
    WkbData::unit_chirp().position_field(Axis::with_spacing(-8.0, 8.0, dx)?, hbar)
}

/// Its transform on an `n x n` grid over `[-r, r]^2`.
pub fn chirp_phase(hbar: f64, dx: f64, r: f64, n: usize) -> Result<ComplexField> {
    let ax = Axis::new(-r, r, n)?;
    wave_packet_transform(&chirp_position(hbar, dx)?, &[ax, ax])
}
