use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dataset size {m} is outside the model domain (need m {bound})")]
    Domain { m: f64, bound: String },

    #[error("agent {agent} has negative contribution {value}")]
    NegativeContribution { agent: usize, value: f64 },

    #[error("profile has {got} entries but the population has {expected} agents")]
    ProfileLength { got: usize, expected: usize },

    #[error("two-type mechanism requires a population with a two-type prior")]
    MissingTypePrior,

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        last: Vec<f64>,
    },

    #[error("equilibrium self-check failed for agent {agent}: contribution {contribution}, best response {best_response}")]
    NashCheck {
        agent: usize,
        contribution: f64,
        best_response: f64,
    },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
