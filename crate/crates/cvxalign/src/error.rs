use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension guard violated: {0}")]
    DimensionGuard(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("verification failure: {0}")]
    VerificationFailure(String),

    #[error("checksum mismatch for {path}: manifest {expected}, data {got}")]
    ChecksumMismatch {
        path: String,
        expected: String,
        got: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString, context: &'static str) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
            context,
        }
    }
}
