//! Geometry stages of the occupancy curation pipeline: majority-vote
//! voxelization, k-NN label propagation, asset-to-box fitting, dynamic point
//! removal and ego-shift resampling. Point clouds are stored as `LPCD` files
//! (see [`io`]).

pub mod cloud;
pub mod error;
pub mod io;
pub mod knn;
pub mod resample;
pub mod voxelize;

pub use cloud::{fit_asset_to_box, remove_points_in_boxes, LabeledPointCloud};
pub use error::{Result, VoxelError};
pub use knn::knn_propagate;
pub use resample::{resample_occupancy, EgoShift};
pub use voxelize::voxelize_majority;
