//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("singular regressor matrix: {0}")]
    Singular(String),

    #[error("shape mismatch at {layer}: expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {reason} ({} epochs completed)", history.len())]
    Diverged {
        epoch: usize,
        reason: String,
        /// Per-epoch (train loss, validation loss) up to the failure.
        history: Vec<(f64, f64)>,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{failed} experiment cell(s) failed")]
    CellFailures { failed: usize },
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 experiment-cell failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Spec(_) => 1,
            Error::CellFailures { .. } => 3,
            _ => 2,
        }
    }
}
