//! Toy occupancy VAE and spatio-temporal occupancy diffusion transformer.
//!
//! - [`vae`]: class-embedding flattening, downsampling encoder, mirrored decoder.
//! - [`dit`]: dual-stream DiT with layout tokens, causal temporal attention
//!   and a zero-initialized temporal gate.
//! - [`train`]: deterministic batched training for both models.
//! - [`sample`]: Euler sampling with classifier-free guidance and rollout.
//! - [`data`]: the procedural scene generator used for toy runs.

pub mod bev;
pub mod config;
pub mod data;
pub mod dit;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod mask;
pub mod sample;
pub mod train;
pub mod vae;

pub use bev::{pool_weights, BevEncoder};
pub use config::{DitConfig, DitTrainConfig, VaeConfig, VaeTrainConfig};
pub use data::{generate_dataset, generate_scene, DatasetConfig, Scene};
pub use dit::{DitInput, StOccDit, StreamInput};
pub use error::{Result, StError};
pub use mask::{build_temporal_mask, stream_mask, StreamKind, StreamTag};
pub use sample::{cfg_combine, euler_integrate, euler_sample, rollout, Rollout};
pub use train::{dit_train_step, train_dit, train_vae, LatentClip, TrainFrame, TrainLog};
pub use vae::{argmax_labels, vae_flatten, OccVae};
