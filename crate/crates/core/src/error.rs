use thiserror::Error;

/// Snapshot taken when a training step produces a non-finite loss.
#[derive(Debug, Clone)]
pub struct FaultSnapshot {
    pub step: u64,
    pub episode: u64,
    pub critic_loss: f64,
    pub safety_loss: f64,
    pub actor_loss: f64,
    pub max_param_abs: f64,
}

impl std::fmt::Display for FaultSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {} episode {}: critic={} safety={} actor={} max|param|={}",
            self.step, self.episode, self.critic_loss, self.safety_loss, self.actor_loss, self.max_param_abs
        )
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    /// A constructor or setter was handed a value outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A caller broke an API contract (e.g. a probability outside [0,1]).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// The math itself is undefined for these inputs (division by zero, log of
    /// a non-positive number, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A gradient step produced a non-finite loss; training cannot continue.
    #[error("training fault at {0}")]
    TrainingFault(Box<FaultSnapshot>),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Serde(e.to_string())
    }
}
