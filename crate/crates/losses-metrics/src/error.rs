use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("probability row {row} sums to {sum}")]
    NotNormalized { row: usize, sum: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("token weights are all zero")]
    ZeroWeights,
    #[error("negative token weight {0}")]
    NegativeWeight(f64),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Occ(#[from] occ_core::OccError),
}

pub type Result<T> = std::result::Result<T, LossError>;
