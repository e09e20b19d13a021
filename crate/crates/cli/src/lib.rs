//! Experiment front end for `koopman-flow`: dataset generation, training,
//! evaluation and the reference experiments.

use std::path::Path;

pub mod commands;
pub mod config;
pub mod output;
pub mod reproduce;

pub use config::ExperimentConfig;

/// Version string recorded in manifests.
pub const VERSION: &str = env!("KOOPMAN_FLOW_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] koopman_flow::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 for configuration and usage errors, 3 for
    /// numerical failures, 4 for file and parse errors.
    pub fn exit_code(&self) -> i32 {
        use koopman_flow::ErrorKind;
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Numeric => 3,
                ErrorKind::Io => 4,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
