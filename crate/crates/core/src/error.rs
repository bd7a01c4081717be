use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input
    /// or bad data on disk).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateFeature(_)
                | Error::NonFinite(_)
                | Error::UndefinedMetric(_)
                | Error::RankDeficient(_)
                | Error::Overflow(_)
        )
    }
}
