use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("{points} points but {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
    #[error("labeled point set is empty")]
    EmptyLabeled,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("asset has zero extent along canonical axis {0}")]
    ZeroExtent(usize),
    #[error("LPCD: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Occ(#[from] occ_core::OccError),
}

pub type Result<T> = std::result::Result<T, VoxelError>;
