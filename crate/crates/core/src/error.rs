use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdaError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("missing coefficient for multi-index {0:?}")]
    MissingCoefficient(Vec<u32>),

    #[error("point {0:?} lies outside the unit hypercube")]
    OutOfDomain(Vec<f64>),

    #[error("duplicate design location {0:?}")]
    DuplicatePoint(Vec<f64>),

    #[error("not enough observations: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("design density is not positive at {0:?}")]
    NonPositiveDensity(Vec<f64>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate covariance: Gram factorization failed after jitter {jitter:e}")]
    DegenerateCovariance { jitter: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("estimation impossible: {0}")]
    Estimation(String),
}

impl FdaError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        FdaError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Whether the error comes from a numerical invariant rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FdaError::Numerical(_)
                | FdaError::DegenerateCovariance { .. }
                | FdaError::Estimation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FdaError>;
