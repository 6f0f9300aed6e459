use thiserror::Error;

use crate::model::GroupedCoefficients;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The printed block update divides by `2 * lambda2`; a pure group-lasso
    /// request has no closed-form update.
    #[error("unsupported configuration: lambda2 = 0 has no closed-form block update (use lambda2 > 0)")]
    ZeroLambda2,

    #[error("pilot fit did not converge (best objective {objective})")]
    PilotNonConvergence {
        best: GroupedCoefficients,
        objective: f64,
    },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("covariance factorization failed")]
    Factorization,

    #[error("empty tuning grid")]
    EmptyGrid,

    #[error("response has zero variance")]
    ZeroVariance,
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
