use thiserror::Error;

use tdi_autodiff::AdError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("trajectory {0} is not terminated")]
    Unterminated(u64),
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("missing expert values for state {0}")]
    MissingExpert(usize),
    #[error("configuration conflict: {0}")]
    Config(String),
    #[error("did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
