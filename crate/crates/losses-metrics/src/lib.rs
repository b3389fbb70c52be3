//! Training losses (focal, Lovász-Softmax, KL, token-weighted flow matching)
//! and occupancy evaluation metrics.

pub mod error;
pub mod flow;
pub mod losses;
pub mod metrics;

pub use error::{LossError, Result};
pub use flow::{
    flow_interpolate, flow_matching_loss, logit_normal_quantile, sample_logit_normal, small_object_weights, velocity_target,
    FlowSample,
};
pub use losses::{cross_entropy, focal_loss, kl_standard_normal, lovasz_softmax, softmax, softmax_backward};
pub use metrics::{
    bev_topdown_accumulate, bev_vs_layout_metrics, binary_iou, confusion_accumulate, miou, ConfusionMatrix,
    IouReport, LayoutIouAccumulator, LayoutReport,
};
