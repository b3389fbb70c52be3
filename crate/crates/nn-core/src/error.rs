use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("attention mask row {0} has no allowed keys")]
    EmptyMaskRow(usize),
    #[error("head dimension {0} must be divisible by 4 for 2D RoPE")]
    RopeHeadDim(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
