use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("{msg} at row {row}")]
    Parse { row: usize, msg: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite objective after {iterations} iterations")]
    NonFinite { iterations: usize },

    #[error("oracle is linear-family only")]
    NonLinearOracle,

    #[error("bootstrap plans differ: {0}")]
    PlanMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
