use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("{context}: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An iterate or residual became non-finite. `trace` holds the residual
    /// norms observed before the failure.
    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize, trace: Vec<f64> },

    #[error("finite-difference oracle produced a non-finite value at coordinate {coordinate}")]
    OracleFailure { coordinate: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("all {0} samples in the batch diverged")]
    BatchDiverged(usize),

    #[error("every batch in epoch {0} diverged")]
    EpochDiverged(usize),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
