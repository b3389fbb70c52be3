//! Control mechanics for geometry-guided multi-view expansion at toy scale.
//!
//! - [`control`]: injection schedule and a zero-initialized control branch
//!   that adds scaled hints after selected backbone blocks.
//! - [`modes`]: the five anchor/target training modes, their milestone
//!   mixture, view partitioning and the anchor-down-weighted loss.
//! - [`plan`]: surround-synthesis and rig-densification call planners with
//!   an independent validator.

pub mod control;
pub mod error;
pub mod modes;
pub mod plan;

pub use control::{control_check, injection_indices, Backbone, ControlBranch, ControlledBackbone, HintInputs, HintSchedule};
pub use error::{PlanError, Result};
pub use modes::{anchor_weighted_loss, partition_views, sample_mode, ModeSchedule, Partition, ViewMode};
pub use plan::{plan_densify, plan_surround, validate_plan, PlanCall, SurroundPlan};
