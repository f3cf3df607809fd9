//! Configuration-driven runner for the phasewave engine.
//!
//! [`config`] parses and validates run descriptions, [`run`] executes them
//! and writes JSON-lines reports, [`commands`] holds the command-line verbs.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;

pub use commands::{execute, main_with, Cli};
pub use config::{load_config, parse_config, ConfigError, Parameter, Plan, RunConfig};
pub use error::CliError;
pub use run::{convergence_study, run, ConvergenceTable, Record, RunReport};
