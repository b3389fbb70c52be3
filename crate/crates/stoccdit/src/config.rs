//! Model and training configurations. Every field is explicit in JSON.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Result, StError};

fn invalid(msg: impl Into<String>) -> StError {
    StError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    /// Occupancy grid `[X, Y, Z]`.
    pub grid_dims: [usize; 3],
    pub num_classes: usize,
    /// Per-class embedding width `C'`.
    pub class_embed_dim: usize,
    /// Latent channels `C_z`.
    pub latent_channels: usize,
    /// Power of two; one stride-2 stage per factor of two.
    pub spatial_downsample: usize,
    /// Feature width after each downsampling stage.
    pub stage_widths: Vec<usize>,
    pub heads: usize,
    pub mlp_mult: usize,
}

impl VaeConfig {
    pub fn toy() -> Self {
        Self {
            grid_dims: [32, 32, 8],
            num_classes: 6,
            class_embed_dim: 4,
            latent_channels: 8,
            spatial_downsample: 4,
            stage_widths: vec![64, 96],
            heads: 4,
            mlp_mult: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ds = self.spatial_downsample;
        if ds < 2 || !ds.is_power_of_two() {
            return Err(invalid(format!("spatial_downsample {ds} must be a power of two ≥ 2")));
        }
        let stages = ds.trailing_zeros() as usize;
        if self.stage_widths.len() != stages {
            return Err(invalid(format!("{} stage widths for {stages} stages", self.stage_widths.len())));
        }
        let [x, y, z] = self.grid_dims;
        if x % ds != 0 || y % ds != 0 || z == 0 {
            return Err(invalid(format!("downsample {ds} does not divide grid {:?}", self.grid_dims)));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(invalid(format!("{} classes", self.num_classes)));
        }
        if self.class_embed_dim == 0 || self.latent_channels == 0 || self.mlp_mult == 0 {
            return Err(invalid("zero width"));
        }
        let last = *self.stage_widths.last().expect("at least one stage");
        if self.heads == 0 || last % self.heads != 0 || (last / self.heads) % 4 != 0 {
            return Err(invalid(format!("width {last} with {} heads needs a head dim divisible by 4", self.heads)));
        }
        if self.stage_widths.iter().any(|&w| w == 0) {
            return Err(invalid("zero stage width"));
        }
        Ok(())
    }

    pub fn latent_dims(&self) -> [usize; 2] {
        [self.grid_dims[0] / self.spatial_downsample, self.grid_dims[1] / self.spatial_downsample]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitConfig {
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub frames_per_clip: usize,
    /// Tokens per side; `S = token_side²`.
    pub token_side: usize,
    pub latent_channels: usize,
    pub layout_channels: usize,
    /// Layout cells per token side.
    pub layout_patch: usize,
    pub bev_embed_dim: usize,
    pub freq_dim: usize,
    pub cfg_dropout: f64,
    pub history_dropout: f64,
    pub clean_noise_sigma: f64,
    pub euler_steps: usize,
    pub cfg_scale: f64,
    /// Lets noisy frame `t` attend clean frame `t` as well.
    pub noisy_sees_current_clean: bool,
}

impl DitConfig {
    pub fn toy() -> Self {
        Self {
            depth: 2,
            hidden: 64,
            heads: 4,
            ffn_mult: 2,
            frames_per_clip: 4,
            token_side: 8,
            latent_channels: 8,
            layout_channels: 5,
            layout_patch: 4,
            bev_embed_dim: 32,
            freq_dim: 64,
            cfg_dropout: 0.1,
            history_dropout: 0.15,
            clean_noise_sigma: 0.2,
            euler_steps: 20,
            cfg_scale: 2.0,
            noisy_sees_current_clean: false,
        }
    }

    /// Full-scale constants, recorded for reference; not runnable here.
    pub fn full_scale() -> Self {
        Self {
            depth: 24,
            hidden: 768,
            heads: 12,
            ffn_mult: 4,
            frames_per_clip: 4,
            token_side: 32,
            latent_channels: 8,
            layout_channels: 15,
            layout_patch: 8,
            bev_embed_dim: 768,
            freq_dim: 256,
            euler_steps: 30,
            cfg_scale: 2.0,
            ..Self::toy()
        }
    }

    pub fn tokens(&self) -> usize {
        self.token_side * self.token_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.frames_per_clip == 0 || self.token_side == 0 || self.layout_patch == 0 {
            return Err(invalid("depth, frames, token side and patch must be positive"));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 || (self.hidden / self.heads) % 4 != 0 {
            return Err(invalid(format!("hidden {} with {} heads needs a head dim divisible by 4", self.hidden, self.heads)));
        }
        if self.freq_dim == 0 || self.freq_dim % 2 != 0 {
            return Err(invalid(format!("freq_dim {} must be even", self.freq_dim)));
        }
        if self.latent_channels == 0 || self.bev_embed_dim == 0 || self.ffn_mult == 0 {
            return Err(invalid("zero width"));
        }
        if self.layout_channels == 0 || self.layout_channels > 16 {
            return Err(invalid(format!("{} layout channels", self.layout_channels)));
        }
        for (name, p) in [("cfg_dropout", self.cfg_dropout), ("history_dropout", self.history_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.clean_noise_sigma >= 0.0) || !self.cfg_scale.is_finite() || self.euler_steps == 0 {
            return Err(invalid("noise sigma, cfg scale or euler steps out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub lambda_lovasz: f64,
    pub lambda_kl: f64,
    pub seed: u64,
}

impl VaeTrainConfig {
    pub fn toy() -> Self {
        Self {
            epochs: 12,
            batch_size: 8,
            lr: 2e-3,
            warmup_steps: 50,
            min_lr_ratio: 0.05,
            weight_decay: 0.0,
            grad_clip: 1.0,
            focal_gamma: losses_metrics::losses::DEFAULT_GAMMA,
            focal_alpha: losses_metrics::losses::DEFAULT_ALPHA,
            lambda_lovasz: losses_metrics::losses::DEFAULT_LAMBDA_LOVASZ,
            lambda_kl: losses_metrics::losses::DEFAULT_LAMBDA_KL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitTrainConfig {
    /// Single-frame epochs with the temporal sub-layers frozen.
    pub phase1_epochs: usize,
    /// Dual-stream clip epochs.
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub min_lr_ratio: f64,
    /// Learning-rate multiplier for parameters inherited from phase 1.
    pub phase2_lr_mult: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub logit_location: f64,
    pub logit_scale: f64,
    pub rare_beta: f64,
    pub seed: u64,
}

impl DitTrainConfig {
    pub fn toy() -> Self {
        Self {
            phase1_epochs: 10,
            phase2_epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            warmup_steps: 50,
            min_lr_ratio: 0.1,
            phase2_lr_mult: 0.1,
            weight_decay: 0.0,
            grad_clip: 1.0,
            logit_location: losses_metrics::flow::DEFAULT_LOGIT_LOCATION,
            logit_scale: losses_metrics::flow::DEFAULT_LOGIT_SCALE,
            rare_beta: losses_metrics::flow::DEFAULT_RARE_BETA,
            seed: 0,
        }
    }
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}
