use std::path::PathBuf;

use crate::dataset::DatasetError;
use crate::querylang::QueryError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Query(#[from] QueryError),

    #[error("dimension mismatch: expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot aggregate an empty set of gradient contributions")]
    EmptyAggregate,

    #[error("sample came back empty after a resample")]
    EmptySample,

    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: u64 },

    #[error("line search stalled after {shrinks} shrink steps")]
    LineSearchStalled { shrinks: u32 },

    #[error("invalid plan {plan}: {reason}")]
    InvalidPlan { plan: String, reason: String },

    #[error("iteration estimate unavailable for {algorithm}: {reason}")]
    EstimationUnavailable { algorithm: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
