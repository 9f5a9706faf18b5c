use std::path::Path;

use thiserror::Error;

/// Exit status for configuration and usage problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status when a run diverges.
pub const EXIT_DIVERGED: i32 = 3;
/// Exit status for I/O failures.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("run diverged: {0}")]
    Diverged(String),

    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            context: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<deq_core::Error> for CliError {
    fn from(e: deq_core::Error) -> Self {
        use deq_core::Error as E;
        match e {
            E::Divergence { .. } | E::BatchDiverged(_) | E::EpochDiverged(_) => {
                CliError::Diverged(e.to_string())
            }
            E::Io(message) => CliError::Io {
                context: "i/o".into(),
                message,
            },
            other => CliError::Config(other.to_string()),
        }
    }
}
