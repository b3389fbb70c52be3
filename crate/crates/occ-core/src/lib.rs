//! Core data model for occupancy-centric driving scene generation.
//!
//! - [`LabelSchema`]: semantic class table, panoptic conventions and the
//!   class → BEV layout channel correspondence.
//! - [`GridSpec`], [`SemanticOccupancyGrid`], [`PanopticVoxelGrid`]: dense voxel volumes.
//! - [`BevLayout`]: multi-hot top-down raster used as the conditioning input.
//! - [`Se3Pose`], [`OrientedBox`]: rigid transforms and annotated boxes.
//!
//! Binary containers (`OCCG`, `BEVL`) live in [`io`].

pub mod error;
pub mod grid;
pub mod io;
pub mod layout;
pub mod panoptic;
pub mod pose;
pub mod project;
pub mod schema;

pub use error::{OccError, Result};
pub use grid::{GridSpec, PanopticVoxelGrid, SemanticOccupancyGrid};
pub use layout::{layout_overwrite, layout_rasterize, BevLayout, LayoutSpec, Polygon};
pub use panoptic::{panoptic_decode, panoptic_encode, PanopticLabel};
pub use pose::{OrientedBox, Se3Pose};
pub use project::{bev_topdown_project, BevClassMap};
pub use schema::{EdgeMode, LabelSchema, OverwriteRule};
