//! Camera models, Plücker ray embeddings and first-hit raycasting of
//! semantic occupancy into per-pixel semantic/coordinate buffers.

pub mod camera;
pub mod error;
pub mod io;
pub mod raycast;

pub use camera::{densify_rig, plucker_embedding, Camera, CameraRig, CameraRole};
pub use error::{RenderError, Result};
pub use raycast::{first_hit, raycast_buffers, GeometryBuffers, Hit};
