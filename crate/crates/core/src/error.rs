use thiserror::Error;

/// Errors raised by estimators, policy constructors and optimizers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("policy is deterministic and has no density")]
    Deterministic,

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("covariance function depends on the full history; a state-dependent one is required")]
    HistoryDependent,

    #[error("feature matrix is rank deficient")]
    RankDeficient,

    #[error("action dimension {action_dim} exceeds parameter dimension {param_dim}")]
    ActionDimExceedsParamDim { action_dim: usize, param_dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite parameter vector at stage {stage}, step {step}")]
    NonFiniteTheta { stage: usize, step: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid valley profile: {0}")]
    InvalidProfile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
