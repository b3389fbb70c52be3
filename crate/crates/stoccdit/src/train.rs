//! Training loops.
//!
//! A batch is reduced deterministically: every sample's gradient is computed
//! on a fresh copy of the model (optionally in parallel), and the per-sample
//! gradients are then summed in sample order. Results therefore do not
//! depend on the thread count.

use losses_metrics::{flow_interpolate, flow_matching_loss, logit_normal_quantile, small_object_weights, velocity_target};
use nn_core::optim::{clip_grad_norm, AdamWConfig, LrSchedule};
use nn_core::rng::indexed;
use nn_core::{AdamW, Module, Tensor};
use occ_core::{BevLayout, SemanticOccupancyGrid};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DitTrainConfig, VaeTrainConfig};
use crate::dit::{is_temporal_param, DitInput, StOccDit, StreamInput};
use crate::error::{Result, StError};
use crate::vae::OccVae;

/// Optional worker pool; `threads ≤ 1` runs inline.
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| StError::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { pool })
    }

    /// Order-preserving map.
    pub fn map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }
}

/// Mean loss of a batch; leaves the mean gradient in `model`.
pub fn batch_gradients<M, T>(
    model: &mut M,
    items: &[T],
    workers: &Workers,
    f: impl Fn(&mut M, &T) -> Result<f64> + Sync,
) -> Result<f64>
where
    M: Module + Clone + Sync + Send,
    T: Sync,
{
    let base: &M = model;
    let results = workers.map(items, |item| -> Result<(f64, Vec<Tensor>)> {
        let mut m = base.clone();
        m.zero_grad();
        let loss = f(&mut m, item)?;
        Ok((loss, m.grads()))
    });
    model.zero_grad();
    let mut total = 0.0;
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        model.accumulate_grads(&grads);
    }
    let scale = 1.0 / items.len() as f64;
    model.scale_grads(scale);
    Ok(total * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub phase: u8,
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// Mean batch loss per epoch, across phases in order.
    pub epoch_means: Vec<f64>,
}

fn schedule(lr: f64, warmup: u64, total: u64, min_ratio: f64) -> LrSchedule {
    LrSchedule { base: lr, warmup, total, min_ratio }
}

/// Trains the VAE on `grids`; `on_step` sees every optimizer step.
pub fn train_vae(
    vae: &mut OccVae,
    grids: &[SemanticOccupancyGrid],
    cfg: &VaeTrainConfig,
    threads: usize,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainLog> {
    if grids.is_empty() || cfg.batch_size == 0 {
        return Err(StError::Config("empty training set or zero batch size".into()));
    }
    let workers = Workers::new(threads)?;
    let per_epoch = grids.len().div_ceil(cfg.batch_size) as u64;
    let sched = schedule(cfg.lr, cfg.warmup_steps, per_epoch * cfg.epochs as u64, cfg.min_lr_ratio);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() });
    let mut log = TrainLog::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..grids.len()).collect();
        order.shuffle(&mut indexed(cfg.seed, "vae-shuffle", epoch as u64));
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<(usize, u64)> =
                chunk.iter().enumerate().map(|(k, &g)| (g, step * cfg.batch_size as u64 + k as u64)).collect();
            let loss = batch_gradients(vae, &items, &workers, |m, &(g, sid)| {
                let mut rng = indexed(cfg.seed, "vae-noise", sid);
                Ok(m.loss_and_grad(&grids[g], cfg, &mut rng)?.total)
            })?;
            let grad_norm = clip_grad_norm(vae, cfg.grad_clip);
            let lr = sched.at(step);
            opt.update(vae, lr);
            let entry = StepLog { phase: 0, epoch, step, loss, lr, grad_norm };
            on_step(&entry);
            log.steps.push(entry);
            sum += loss;
            batches += 1;
            step += 1;
        }
        log.epoch_means.push(sum / batches as f64);
    }
    Ok(log)
}

/// Encoded training clip: per-frame latents (model units) and layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    pub latents: Vec<Tensor>,
    pub layouts: Vec<BevLayout>,
}

fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

/// One frame of a training example.
#[derive(Debug, Clone, Copy)]
pub struct TrainFrame<'a> {
    pub frame: usize,
    /// Clean latent `[S, C_z]` in model units.
    pub latent: &'a Tensor,
    pub layout: &'a BevLayout,
    /// Uniform variate mapped to the logit-normal time.
    pub u: f64,
}

/// One training example; accumulates gradients and returns the loss.
/// `unconditional` replaces every layout by the null condition.
///
/// With `dual_stream` the clip's frames each contribute a clean stream
/// (noise-augmented, randomly dropped) and a noisy stream, with temporal
/// attention enabled. Otherwise each frame contributes its noisy stream only
/// and temporal attention is skipped. The loss is the mean over frames of
/// the token-weighted flow-matching loss against `ε − z`.
pub fn dit_train_step(
    model: &mut StOccDit,
    frames: &[TrainFrame],
    dual_stream: bool,
    unconditional: bool,
    cfg: &DitTrainConfig,
    rare_channels: &[u8],
    rng: &mut impl Rng,
) -> Result<f64> {
    let c = model.config.clone();
    let shape = [c.tokens(), c.latent_channels];
    let max_frame = frames.iter().map(|f| f.frame).max().unwrap_or(0);
    let mut layouts: Vec<Option<&BevLayout>> = vec![None; max_frame + 1];
    let mut streams = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for f in frames {
        if !unconditional {
            layouts[f.frame] = Some(f.layout);
        }
        let tau = logit_normal_quantile(f.u, cfg.logit_location, cfg.logit_scale);
        let eps = gaussian(&shape, rng);
        let z_tau = Tensor::from_vec(&shape, flow_interpolate(f.latent.data(), eps.data(), tau))?;
        targets.push(velocity_target(f.latent.data(), eps.data()));
        weights.push(small_object_weights(f.layout, rare_channels, cfg.rare_beta, c.layout_patch)?);
        if dual_stream {
            let mut clean = f.latent.add(&gaussian(&shape, rng).scale(c.clean_noise_sigma));
            if rng.random_bool(c.history_dropout) {
                clean.fill(0.0);
            }
            streams.push(StreamInput::clean(f.frame, clean));
        }
        streams.push(StreamInput::noisy(f.frame, z_tau, tau));
    }
    let input = DitInput { streams, layouts, temporal: dual_stream };
    let (pred, cache) = model.forward(&input)?;
    let n = frames.len() as f64;
    let mut loss = 0.0;
    let mut dpred = Vec::with_capacity(pred.len());
    for ((p, t), w) in pred.iter().zip(&targets).zip(&weights) {
        let (l, g) = flow_matching_loss(p.data(), t, w)?;
        loss += l / n;
        dpred.push(Tensor::from_vec(&shape, g.into_iter().map(|v| v / n).collect())?);
    }
    model.backward(&cache, &dpred);
    Ok(loss)
}

/// Stratified uniforms for one epoch: slot `i` of `n` gets
/// `(π(i) + U_i) / n` for a random permutation `π`, so each slot is exactly
/// uniform while the epoch covers `(0, 1)` evenly.
pub fn stratified_uniforms(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(rng);
    strata.into_iter().map(|k| (k as f64 + rng.random::<f64>()) / n as f64).collect()
}

/// Exactly `round(p·n)` flags set, at uniformly random positions.
pub fn stratified_flags(n: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    let k = (p * n as f64).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(rng);
    flags
}

/// Two-phase training: phase 1 sees single frames with temporal sub-layers
/// frozen, phase 2 sees whole clips in dual-stream mode with inherited
/// parameters at `phase2_lr_mult` times the learning rate. Diffusion times
/// are stratified over each epoch's frames, and each epoch drops the layout
/// condition of exactly `round(cfg_dropout · n)` of its `n` examples.
pub fn train_dit(
    model: &mut StOccDit,
    clips: &[LatentClip],
    cfg: &DitTrainConfig,
    rare_channels: &[u8],
    threads: usize,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainLog> {
    if clips.is_empty() || cfg.batch_size == 0 {
        return Err(StError::Config("empty training set or zero batch size".into()));
    }
    let workers = Workers::new(threads)?;
    let mut log = TrainLog::default();
    let mut step = 0u64;

    // Phase 1: every (clip, frame) pair on its own.
    let singles: Vec<(usize, usize)> =
        clips.iter().enumerate().flat_map(|(i, c)| (0..c.latents.len()).map(move |f| (i, f))).collect();
    let per_epoch = singles.len().div_ceil(cfg.batch_size) as u64;
    let sched = schedule(cfg.lr, cfg.warmup_steps, per_epoch * cfg.phase1_epochs as u64, cfg.min_lr_ratio);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() });
    let frozen = |name: &str| if is_temporal_param(name) { 0.0 } else { 1.0 };
    for epoch in 0..cfg.phase1_epochs {
        let mut order = singles.clone();
        order.shuffle(&mut indexed(cfg.seed, "dit-shuffle-1", epoch as u64));
        let mut strata = indexed(cfg.seed, "dit-strata-1", epoch as u64);
        let us = stratified_uniforms(order.len(), &mut strata);
        let drop = stratified_flags(order.len(), model.config.cfg_dropout, &mut strata);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<(usize, usize, f64, bool, u64)> = chunk
                .iter()
                .enumerate()
                .map(|(k, &(i, f))| {
                    let slot = b * cfg.batch_size + k;
                    (i, f, us[slot], drop[slot], step * cfg.batch_size as u64 + k as u64)
                })
                .collect();
            let loss = batch_gradients(model, &items, &workers, |m, &(i, f, u, uncond, sid)| {
                let mut rng = indexed(cfg.seed, "dit-sample-1", sid);
                let clip = &clips[i];
                let frame = TrainFrame { frame: f, latent: &clip.latents[f], layout: &clip.layouts[f], u };
                dit_train_step(m, &[frame], false, uncond, cfg, rare_channels, &mut rng)
            })?;
            let grad_norm = clip_grad_norm(model, cfg.grad_clip);
            let lr = sched.at(step);
            opt.update_with(model, lr, &frozen);
            let entry = StepLog { phase: 1, epoch, step, loss, lr, grad_norm };
            on_step(&entry);
            log.steps.push(entry);
            sum += loss;
            batches += 1;
            step += 1;
        }
        log.epoch_means.push(sum / batches as f64);
    }

    // Phase 2: dual-stream clips.
    let per_epoch = clips.len().div_ceil(cfg.batch_size) as u64;
    let sched = schedule(cfg.lr, cfg.warmup_steps.min(per_epoch), per_epoch * cfg.phase2_epochs as u64, cfg.min_lr_ratio);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() });
    let inherited = |name: &str| if is_temporal_param(name) { 1.0 } else { cfg.phase2_lr_mult };
    let phase2_start = step;
    for epoch in 0..cfg.phase2_epochs {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut indexed(cfg.seed, "dit-shuffle-2", epoch as u64));
        let slots: usize = clips.iter().map(|c| c.latents.len()).sum();
        let mut strata = indexed(cfg.seed, "dit-strata-2", epoch as u64);
        let us = stratified_uniforms(slots, &mut strata);
        let drop = stratified_flags(clips.len(), model.config.cfg_dropout, &mut strata);
        let mut offset = 0;
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut items = Vec::with_capacity(chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                let t = clips[i].latents.len();
                let uncond = drop[b * cfg.batch_size + k];
                items.push((i, &us[offset..offset + t], uncond, step * cfg.batch_size as u64 + k as u64));
                offset += t;
            }
            let loss = batch_gradients(model, &items, &workers, |m, &(i, u, uncond, sid)| {
                let mut rng = indexed(cfg.seed, "dit-sample-2", sid);
                let clip = &clips[i];
                let frames: Vec<TrainFrame> = (0..clip.latents.len())
                    .map(|f| TrainFrame { frame: f, latent: &clip.latents[f], layout: &clip.layouts[f], u: u[f] })
                    .collect();
                dit_train_step(m, &frames, true, uncond, cfg, rare_channels, &mut rng)
            })?;
            let grad_norm = clip_grad_norm(model, cfg.grad_clip);
            let lr = sched.at(step - phase2_start);
            opt.update_with(model, lr, &inherited);
            let entry = StepLog { phase: 2, epoch, step, loss, lr, grad_norm };
            on_step(&entry);
            log.steps.push(entry);
            sum += loss;
            batches += 1;
            step += 1;
        }
        log.epoch_means.push(sum / batches as f64);
    }
    Ok(log)
}

/// Posterior means of `grids`, `[S, C_z]` each.
pub fn encode_means(vae: &OccVae, grids: &[&SemanticOccupancyGrid], threads: usize) -> Result<Vec<Tensor>> {
    let workers = Workers::new(threads)?;
    workers.map(grids, |g| vae.encode(g).map(|(mu, _, _)| mu)).into_iter().collect()
}

/// `1 / rms` over all latent entries, so scaled latents have unit RMS.
pub fn latent_scale(latents: &[Tensor]) -> f64 {
    let (sq, n) = latents.iter().fold((0.0, 0usize), |(s, n), t| (s + t.dot(t), n + t.len()));
    if sq == 0.0 {
        1.0
    } else {
        1.0 / (sq / n as f64).sqrt()
    }
}
