use thiserror::Error;

use crate::config::ConfigError;

/// Failures of a CLI invocation; [`CliError::exit_code`] maps them to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),

    #[error("invalid argument {flag}: {message}")]
    Usage { flag: String, message: String },

    #[error(transparent)]
    Engine(#[from] phasewave_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn usage(flag: &str, message: impl Into<String>) -> Self {
        CliError::Usage { flag: flag.to_string(), message: message.into() }
    }

    /// 2 for invalid input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage { .. } => 2,
            _ => 1,
        }
    }
}
