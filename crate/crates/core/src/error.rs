use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Domain { name: &'static str, reason: String },

    #[error("cannot parse `{token}` as a number: {reason}")]
    Parse { token: String, reason: String },

    #[error("scalar mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("engine `{0}` is only available in float mode")]
    FloatOnly(&'static str),

    #[error("root solver did not converge after {iterations} iterations (worst residual {worst_residual:e})")]
    NoConvergence {
        iterations: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("internal consistency failure: {0}")]
    Consistency(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            name,
            reason: reason.into(),
        }
    }
}
