use alloc::string::String;
use core::fmt;

/// Every failure the numerical core can report.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An operation that needs a torus was called in free space (or vice versa).
    ModeMismatch(&'static str),
    /// Two jets with different dimension or truncation degree were combined.
    JetMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A derivative was requested above the truncation order of a jet.
    OrderExceeded { requested: usize, available: usize },
    /// A jet order above what a pipeline supports.
    UnsupportedOrder { requested: usize, max: usize },
    /// Reciprocal of a series with zero constant term.
    Singularity,
    /// Field parameters are not finite or the architecture is malformed.
    InvalidField(String),
    /// Initial condition (covariance) is not usable.
    InvalidInitial(String),
    /// Matrix that should be symmetric positive definite is not.
    NotSpd(&'static str),
    /// Time outside the range (or off the grid) of a Gaussian path.
    OutOfRange { t: f64 },
    /// Gaussian path became numerically singular.
    PathSingular { t: f64, condition: f64 },
    /// Non-finite value encountered while integrating.
    Divergence { t: f64, sample: Option<usize> },
    /// Integrator or grid specification is inconsistent.
    InvalidSpec(String),
    /// Training configuration is invalid.
    InvalidConfig(String),
    /// Field has no trainable parameters.
    NotTrainable,
    /// Backward pass ran past the stored forward tape.
    TapeExhausted,
    /// A training observer failed to store a checkpoint.
    Checkpoint(String),
}

impl Error {
    /// Attach a sample index to a divergence error.
    pub fn with_sample(self, index: usize) -> Self {
        match self {
            Error::Divergence { t, .. } => Error::Divergence {
                t,
                sample: Some(index),
            },
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ModeMismatch(what) => write!(f, "domain mode mismatch: {what}"),
            Error::JetMismatch { left, right } => write!(
                f,
                "jet mismatch: (dim {}, degree {}) vs (dim {}, degree {})",
                left.0, left.1, right.0, right.1
            ),
            Error::OrderExceeded {
                requested,
                available,
            } => write!(
                f,
                "derivative of order {requested} requested from a jet truncated at {available}"
            ),
            Error::UnsupportedOrder { requested, max } => {
                write!(f, "jet order {requested} unsupported (max {max})")
            }
            Error::Singularity => write!(f, "reciprocal of a series with zero constant term"),
            Error::InvalidField(msg) => write!(f, "invalid field: {msg}"),
            Error::InvalidInitial(msg) => write!(f, "invalid initial condition: {msg}"),
            Error::NotSpd(what) => write!(f, "{what} is not symmetric positive definite"),
            Error::OutOfRange { t } => write!(f, "time {t} is outside the path range or off its grid"),
            Error::PathSingular { t, condition } => write!(
                f,
                "gaussian path singular at t = {t} (condition number {condition:.3e})"
            ),
            Error::Divergence { t, sample } => match sample {
                Some(i) => write!(f, "trajectory of sample {i} diverged at t = {t}"),
                None => write!(f, "trajectory diverged at t = {t}"),
            },
            Error::InvalidSpec(msg) => write!(f, "invalid specification: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NotTrainable => write!(f, "field has no trainable parameters"),
            Error::TapeExhausted => write!(f, "backward pass ran past the forward tape"),
            Error::Checkpoint(msg) => write!(f, "checkpoint failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
