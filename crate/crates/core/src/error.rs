use std::io;

use thiserror::Error;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on dimensions, or a dimension violates a
    /// divisibility / size requirement.
    #[error("shape error: {0}")]
    Shape(String),

    /// A scalar parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The API was called in a way its contract forbids (for example,
    /// differentiating a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed input data (image headers, checkpoints, manifests).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! param_err {
    ($($arg:tt)*) => { $crate::error::Error::Parameter(format!($($arg)*)) };
}

pub(crate) use param_err;
pub(crate) use shape_err;
