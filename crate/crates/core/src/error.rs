use thiserror::Error;

/// Errors raised by the sampler, the estimands and the simulation harness.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SaceError {
    #[error("invalid tilt: {0}")]
    InvalidTilt(f64),

    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance not SPD (dimension {dim}, jitter escalated to {max_jitter:e})")]
    CovarianceNotSpd { dim: usize, max_jitter: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid trial data: {0}")]
    InvalidData(String),

    #[error("estimation requires exactly two periods, found {0}")]
    UnsupportedPeriods(usize),

    #[error("no outcome information: no survivors with an observed outcome")]
    NoOutcomeInformation,

    #[error("non-finite log-density for individual {index}")]
    NonFiniteDensity { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("not enough draws: need at least {needed}, got {got}")]
    NotEnoughDraws { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, SaceError>;
