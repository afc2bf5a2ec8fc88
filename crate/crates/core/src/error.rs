use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Adaptive refinement hit its panel limit. Carries the best estimate.
    #[error("quadrature did not converge (estimate {estimate:e}, error bound {error_bound:e})")]
    NotConverged { estimate: f64, error_bound: f64 },

    #[error("{what} is negative beyond round-off: {value:e}")]
    NegativeBeyondRoundoff { what: &'static str, value: f64 },

    #[error("monte carlo estimate inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
