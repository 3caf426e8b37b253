use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the analysis pipeline.
///
/// Variants split into two families: problems with the input data or
/// arguments, and numerical failures during a computation. The CLI maps
/// them onto different exit codes via [`Error::is_numerical`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing field `{field}` in {context}")]
    MissingField { field: String, context: String },

    #[error("circulant embedding has negative eigenvalue {value:e}; retry with a larger length")]
    NegativeEigenvalue { value: f64 },

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("zero fluctuation in window {window} at scale {scale}; negative moment q = {q} diverges")]
    ZeroFluctuation { window: usize, scale: usize, q: f64 },

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("training diverged at epoch {epoch}; try a smaller learning rate")]
    TrainingDiverged { epoch: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures raised by a computation rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NegativeEigenvalue { .. }
                | Error::Diverged { .. }
                | Error::ZeroFluctuation { .. }
                | Error::Singular(_)
                | Error::NonFiniteLoss { .. }
                | Error::TrainingDiverged { .. }
                | Error::Numerical(_)
        )
    }
}
