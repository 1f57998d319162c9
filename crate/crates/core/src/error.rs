use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PairError>;

#[derive(Debug, Error)]
pub enum PairError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("optimization diverged at epoch {epoch} (learning rate {learning_rate}): {reason}")]
    Diverged {
        epoch: usize,
        learning_rate: f64,
        reason: String,
    },

    #[error("no convergence after {iterations} iterations: {0}", .detail)]
    NoConvergence { iterations: usize, detail: String },

    #[error("all {0} grid cells failed")]
    AllCellsFailed(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
}

impl PairError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PairError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        PairError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
