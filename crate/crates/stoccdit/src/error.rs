use thiserror::Error;

#[derive(Debug, Error)]
pub enum StError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] nn_core::NnError),
    #[error(transparent)]
    Loss(#[from] losses_metrics::LossError),
    #[error(transparent)]
    Occ(#[from] occ_core::OccError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StError>;
