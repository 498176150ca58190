use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("generator count mismatch: {left} vs {right}")]
    GeneratorMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension {dim} exceeds the configured cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("generator index {index} out of range for {num_generators} generators")]
    GeneratorIndex { index: usize, num_generators: usize },

    #[error("numerical non-convergence: {0}")]
    NonConvergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("certificate radius {radius} is below the required {required}")]
    RadiusTooSmall { radius: f64, required: f64 },

    #[error("missing certificate for layer {0}")]
    MissingCertificate(usize),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl ToString, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.to_string(),
        }
    }

    /// True for failures caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_generators(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::GeneratorMismatch { left, right });
    }
    Ok(())
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
