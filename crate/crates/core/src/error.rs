use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("time {t} outside trajectory range [0, {max}]")]
    Range { t: f64, max: f64 },

    #[error("step size underflow at t = {t} (last valid time)")]
    StepUnderflow { t: f64 },

    #[error("caustic at t = {t}{}", alpha.map(|a| format!(", alpha = {a}")).unwrap_or_default())]
    Caustic { t: f64, alpha: Option<f64> },

    #[error("truncation: boundary mass {mass:.3e} exceeds {limit:.1e}")]
    Truncation { mass: f64, limit: f64 },

    #[error("grid too coarse: spacing {spacing:.4} exceeds {limit:.4}")]
    GridResolution { spacing: f64, limit: f64 },

    #[error("square-root branch jumps between neighbouring nodes {a} and {b}")]
    Branch { a: usize, b: usize },

    #[error("projection failed: {0}")]
    Projection(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
