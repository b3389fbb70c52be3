use thiserror::Error;

#[derive(Debug, Error)]
pub enum OccError {
    #[error("instance id {0} out of range 0..=999")]
    InstanceOutOfRange(u32),
    #[error("semantic class {0} out of range 1..=17")]
    ClassOutOfRange(u32),
    #[error("stuff/free class {class} must carry instance 0, got {instance}")]
    StuffWithInstance { class: u32, instance: u32 },
    #[error("panoptic label {0} outside 1000..=17999")]
    LabelOutOfRange(u32),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid label schema: {0}")]
    InvalidSchema(String),
    #[error("label {label} at voxel {index} exceeds class count {num_classes}")]
    LabelExceedsClasses { label: u32, index: usize, num_classes: usize },
    #[error("degenerate polygon with {0} vertices")]
    DegeneratePolygon(usize),
    #[error("channel {channel} out of range for {channels}-channel layout")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("footprint mismatch: {0}")]
    FootprintMismatch(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("bad {format} file: {reason}")]
    Format { format: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OccError>;
