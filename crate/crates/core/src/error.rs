use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {value} lies outside the evaluation domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    /// Invalid arguments or inconsistent shapes supplied by the caller.
    #[error("invalid input: {0}")]
    Usage(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// The normal equations of a least-squares step are singular.
    #[error("rank-deficient system of size {size}: null space dimension {null_dim}")]
    RankDeficient { size: usize, null_dim: usize },

    #[error("malformed file {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Whether the error stems from bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Usage(_) | Error::Format { .. } | Error::Json(_) | Error::Domain { .. } => true,
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
