use thiserror::Error;

/// Errors produced by the integrator and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage matrix assembly failed: {0}")]
    Assembly(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian in Newton solve")]
    SingularJacobian,

    #[error("potential evaluated outside its domain: {0}")]
    PotentialDomain(String),

    #[error("too few points above the error floor: need {needed}, have {have}")]
    TooFewPoints { needed: usize, have: usize },

    #[error("ephemeris ingestion failed: {0}")]
    Ingestion(String),

    #[error("reference solution failed: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, Error>;
