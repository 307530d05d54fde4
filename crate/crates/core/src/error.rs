use thiserror::Error;

/// Errors produced by the preferential-BO core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coordinate {index} = {value} lies outside [{lower}, {upper}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (jitter reached {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("sample batch is empty")]
    EmptyBatch,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("index {index} out of range for {len} test points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown benchmark function `{0}`")]
    UnknownFunction(String),

    #[error("unknown acquisition `{0}`")]
    UnknownAcquisition(String),

    #[error("inconsistent method: {0}")]
    InconsistentMethod(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("malformed sample dump: {0}")]
    MalformedDump(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
