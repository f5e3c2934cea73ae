use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("episode already terminated; call reset first")]
    EpisodeOver,
    #[error("environment is not discrete: {0}")]
    NotDiscrete(String),
    #[error("outcome tree exceeded node budget of {budget}")]
    NodeBudget { budget: usize },
    #[error("evaluation operator is not a contraction (row mass {0})")]
    NotContraction(f64),
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
