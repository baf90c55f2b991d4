use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is out of its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integrated tail undefined: infinite mean (alpha = {alpha})")]
    InfiniteMean { alpha: f64 },

    #[error("no intensity: {0}")]
    NoIntensity(String),

    #[error("no stationary solution: E[omega] = {mean_omega} <= 0")]
    NoStationarySolution { mean_omega: f64 },

    /// The closed form does not exist for this scenario.
    #[error("not available: {0}")]
    NotAvailable(String),

    #[error("non-finite Monte Carlo sample: {0}")]
    NonFinite(String),

    #[error("threshold too extreme for budget: {found} exceedances after {samples} samples (need {needed})")]
    ThresholdTooExtreme {
        found: u64,
        samples: u64,
        needed: u64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
