use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("state is not normalized: norm {norm} deviates from 1 by more than {tolerance:e}")]
    NotNormalized { norm: f64, tolerance: f64 },

    #[error("basis `{label}` is not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { label: String, deviation: f64 },

    #[error("basis `{label}` is incomplete: {count} vectors in dimension {dim}")]
    IncompleteBasis {
        label: String,
        count: usize,
        dim: usize,
    },

    #[error("operator is not unitary (max |U*U - I| = {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("shared vector `{vector}` does not match basis {basis} position {position} (deviation {deviation:e})")]
    SharedMismatch {
        vector: String,
        basis: usize,
        position: usize,
        deviation: f64,
    },

    #[error("random draw failed after {attempts} attempts: {reason}")]
    Exhausted { attempts: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
