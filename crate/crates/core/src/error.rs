use thiserror::Error;

use crate::gp::GpModel;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum GsaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The correlation matrix (or a derived covariance) could not be factorized
    /// even after the maximum diagonal jitter.
    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    /// Hyperparameter search failed on every restart. Carries the best model
    /// found, if any candidate could be evaluated at all.
    #[error("GP fit failed: {message}")]
    Fit {
        message: String,
        best: Option<Box<GpModel>>,
    },

    #[error("model state: {0}")]
    State(String),

    /// The denominator of a Sobol ratio vanished.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("selection failed: {0}")]
    Selection(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trace alignment: {0}")]
    Alignment(String),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GsaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GsaError::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = GsaError> = std::result::Result<T, E>;
