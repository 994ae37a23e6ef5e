//! Error taxonomy shared across the toolkit.

use thiserror::Error;

/// Errors produced by toolkit operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative numerical procedure failed to reach its target.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A query time fell outside the domain of a trajectory.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// Mesh truncation would leave no usable horizon.
    #[error("degenerate horizon: {0}")]
    DegenerateHorizon(String),

    /// A requested penalty has a reference too small to normalize by.
    #[error("normalization degenerate: {0}")]
    NormalizationDegenerate(String),

    /// A ratio statistic has a zero denominator.
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
