//! Toy end-to-end run: dataset, VAE, latent encoding, DiT and rollout
//! evaluation against an untrained baseline.

use std::time::Instant;

use losses_metrics::{ConfusionMatrix, IouReport, LayoutIouAccumulator};
use nn_core::rng::stream;
use occ_core::{BevLayout, LabelSchema, SemanticOccupancyGrid};
use serde::{Deserialize, Serialize};

use crate::config::{DitConfig, DitTrainConfig, VaeConfig, VaeTrainConfig};
use crate::data::{generate_dataset, DatasetConfig, Scene};
use crate::dit::StOccDit;
use crate::error::{Result, StError};
use crate::sample::rollout;
use crate::train::{encode_means, latent_scale, train_dit, train_vae, LatentClip, StepLog, TrainLog};
use crate::vae::OccVae;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub vae: VaeConfig,
    pub vae_train: VaeTrainConfig,
    pub dit: DitConfig,
    pub dit_train: DitTrainConfig,
    /// Seed for model initialization and rollout noise.
    pub seed: u64,
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn toy() -> Self {
        Self {
            dataset: DatasetConfig::toy(),
            vae: VaeConfig::toy(),
            vae_train: VaeTrainConfig::toy(),
            dit: DitConfig::toy(),
            dit_train: DitTrainConfig::toy(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub vae_log: TrainLog,
    pub dit_log: TrainLog,
    /// Reconstruction metrics on held-out scenes.
    pub vae_val: IouReport,
    pub latent_scale: f64,
    /// Mean rollout IoU over agent channels, trained model.
    pub agent_iou: f64,
    /// Same metric for a freshly initialized DiT with the trained VAE.
    pub baseline_agent_iou: f64,
    pub agent_per_channel: Vec<Option<f64>>,
    pub seconds: Timings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub data: f64,
    pub vae: f64,
    pub encode: f64,
    pub dit: f64,
    pub eval: f64,
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub vae: OccVae,
    pub dit: StOccDit,
    pub scenes: Vec<Scene>,
}

/// Progress events of [`run_experiment`].
pub enum Progress<'a> {
    Stage(&'a str),
    Vae(&'a StepLog),
    Dit(&'a StepLog),
}

/// Reconstruction confusion over `grids`.
pub fn reconstruction_report(vae: &OccVae, grids: &[&SemanticOccupancyGrid], schema: &LabelSchema) -> Result<IouReport> {
    let mut m = ConfusionMatrix::new(schema.num_classes());
    for g in grids {
        let r = vae.reconstruct(g)?;
        m.accumulate_labels(&r.labels, &g.labels)?;
    }
    Ok(IouReport::from_matrix(&m, schema))
}

/// Rolls out every scene from its layouts and scores the projected
/// occupancy against the layouts on the schema's agent channels. Returns the
/// mean over agent channels and the per-agent-channel IoUs.
pub fn rollout_agent_iou(
    vae: &OccVae,
    scale: f64,
    dit: &StOccDit,
    scenes: &[&Scene],
    schema: &LabelSchema,
    seed: u64,
) -> Result<(f64, Vec<Option<f64>>)> {
    let mut acc = LayoutIouAccumulator::new(schema.layout_channels as usize);
    for (i, scene) in scenes.iter().enumerate() {
        let layouts: Vec<BevLayout> = scene.frames.iter().map(|f| f.layout.clone()).collect();
        let spec = scene.frames[0].grid.spec;
        let out = rollout(vae, scale, dit, &layouts, spec, dit.config.euler_steps, dit.config.cfg_scale, seed ^ i as u64)?;
        for (g, l) in out.grids.iter().zip(&layouts) {
            acc.accumulate(g, l, schema)?;
        }
    }
    let report = acc.report();
    let agents: Vec<Option<f64>> = schema.agent_channels.iter().map(|&c| report.per_channel[c as usize]).collect();
    let present: Vec<f64> = agents.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(StError::Config("no agent cells in the evaluation scenes".into()));
    }
    Ok((present.iter().sum::<f64>() / present.len() as f64, agents))
}

pub fn run_experiment(cfg: &ExperimentConfig, progress: impl FnMut(Progress)) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, None, progress)
}

/// As [`run_experiment`], but a supplied VAE replaces VAE training (its
/// training log is then empty).
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    pretrained_vae: Option<OccVae>,
    mut progress: impl FnMut(Progress),
) -> Result<ExperimentOutput> {
    let schema = LabelSchema::toy();
    if cfg.vae.grid_dims != cfg.dataset.grid_dims || cfg.vae.num_classes != schema.num_classes() {
        return Err(StError::Config("VAE grid/classes do not match the dataset".into()));
    }
    let mut secs = Timings::default();

    progress(Progress::Stage("data"));
    let clock = Instant::now();
    let scenes = generate_dataset(&cfg.dataset)?;
    let train: Vec<&Scene> = scenes[cfg.dataset.train_range()].iter().collect();
    let val: Vec<&Scene> = scenes[cfg.dataset.val_range()].iter().collect();
    let train_grids: Vec<SemanticOccupancyGrid> =
        train.iter().flat_map(|s| s.frames.iter().map(|f| f.grid.clone())).collect();
    secs.data = clock.elapsed().as_secs_f64();

    progress(Progress::Stage("vae"));
    let clock = Instant::now();
    let (vae, vae_log) = match pretrained_vae {
        Some(vae) => {
            if vae.config != cfg.vae {
                return Err(StError::Config("pretrained VAE config differs from the experiment's".into()));
            }
            (vae, TrainLog::default())
        }
        None => {
            let mut vae = OccVae::new(cfg.vae.clone(), &mut stream(cfg.seed, "vae-init"))?;
            let log = train_vae(&mut vae, &train_grids, &cfg.vae_train, cfg.threads, |s| progress(Progress::Vae(s)))?;
            (vae, log)
        }
    };
    let val_grids: Vec<&SemanticOccupancyGrid> = val.iter().flat_map(|s| s.frames.iter().map(|f| &f.grid)).collect();
    let vae_val = reconstruction_report(&vae, &val_grids, &schema)?;
    secs.vae = clock.elapsed().as_secs_f64();

    progress(Progress::Stage("encode"));
    let clock = Instant::now();
    let refs: Vec<&SemanticOccupancyGrid> = train_grids.iter().collect();
    let means = encode_means(&vae, &refs, cfg.threads)?;
    let scale = latent_scale(&means);
    let frames = cfg.dataset.frames;
    let clips: Vec<LatentClip> = train
        .iter()
        .enumerate()
        .map(|(i, s)| LatentClip {
            latents: means[i * frames..(i + 1) * frames].iter().map(|m| m.scale(scale)).collect(),
            layouts: s.frames.iter().map(|f| f.layout.clone()).collect(),
        })
        .collect();
    secs.encode = clock.elapsed().as_secs_f64();

    progress(Progress::Stage("dit"));
    let clock = Instant::now();
    let baseline = StOccDit::new(cfg.dit.clone(), &mut stream(cfg.seed, "dit-init"))?;
    let mut dit = baseline.clone();
    let dit_log = train_dit(&mut dit, &clips, &cfg.dit_train, &schema.rare_channels, cfg.threads, |s| {
        progress(Progress::Dit(s))
    })?;
    secs.dit = clock.elapsed().as_secs_f64();

    progress(Progress::Stage("eval"));
    let clock = Instant::now();
    let eval_seed = cfg.seed ^ nn_core::rng::fnv1a(b"rollout-eval");
    let (agent_iou, agent_per_channel) = rollout_agent_iou(&vae, scale, &dit, &val, &schema, eval_seed)?;
    let (baseline_agent_iou, _) = rollout_agent_iou(&vae, scale, &baseline, &val, &schema, eval_seed)?;
    secs.eval = clock.elapsed().as_secs_f64();

    let report = ExperimentReport {
        vae_log,
        dit_log,
        vae_val,
        latent_scale: scale,
        agent_iou,
        baseline_agent_iou,
        agent_per_channel,
        seconds: secs,
    };
    Ok(ExperimentOutput { report, vae, dit, scenes })
}
