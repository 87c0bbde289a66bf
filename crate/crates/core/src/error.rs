//! Error type shared across the crate.

use alloc::string::String;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// All failure modes surfaced by this crate.
///
/// Variants are coarse on purpose: callers either propagate them or map them
/// to an exit status, and the message carries the detail.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor or matrix dimensions do not line up for the requested op.
    ShapeMismatch(String),
    /// An argument is outside its documented domain (negative rate, zero
    /// length, bad index, ...).
    InvalidArgument(String),
    /// A NaN or infinity showed up where a finite value is required.
    NonFinite(String),
    /// An estimator needs more samples than were provided.
    TooFewSamples { needed: usize, got: usize },
    /// A structural precondition on the input data does not hold (empty
    /// sequence, inconsistent joint count, unknown edge, ...).
    InvalidData(String),
    /// Training produced a non-finite loss and cannot continue.
    Diverged { epoch: usize },
    /// An iterative routine failed to reach its tolerance.
    NoConvergence(String),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::TooFewSamples { needed, got } => {
                write!(f, "too few samples: need at least {needed}, got {got}")
            }
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::Diverged { epoch } => {
                write!(f, "training diverged: non-finite loss at epoch {epoch}")
            }
            Error::NoConvergence(msg) => write!(f, "no convergence: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
