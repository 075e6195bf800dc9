use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor shapes are incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// A scalar or configuration parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// An API was used outside of its contract (e.g. backward on a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),
    /// Input is empty where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),
    /// Input carries no usable signal (e.g. every ERGAS band skipped).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// A NaN or infinite value was produced or supplied.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! param_err {
    ($($arg:tt)*) => { $crate::error::Error::Parameter(alloc::format!($($arg)*)) };
}
pub(crate) use param_err;
pub(crate) use shape_err;
