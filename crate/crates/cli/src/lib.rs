//! Experiment driver: JSON config in, CSV/JSON artifacts out.

pub mod config;
pub mod io;
pub mod report;
pub mod run;

use std::path::PathBuf;

pub use config::{Command, ExperimentConfig};
pub use run::{run_experiment, Overrides, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// Training or Newton failed numerically. Partial artifacts were written.
    #[error("numerical failure: {0}")]
    Divergence(String),

    #[error(transparent)]
    Core(#[from] mptp_core::Error),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status: 2 for bad configs, 3 for numerical divergence.
    pub fn exit_code(&self) -> i32 {
        use mptp_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Core(E::InvalidInput(_) | E::Dimension { .. } | E::Unsupported(_)) => 2,
            CliError::Core(E::Divergence { .. } | E::Stagnation { .. }) => 3,
            _ => 1,
        }
    }
}
