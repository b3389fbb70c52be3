//! Argument definitions and subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geometry_render::io::{load_rig, save_cbuf, save_plkb, save_rig, save_semantic_png};
use geometry_render::{raycast_buffers, CameraRig, CameraRole, GeometryBuffers};
use ggve_plan::{control_check, plan_densify, plan_surround, validate_plan, SurroundPlan};
use losses_metrics::{bev_topdown_accumulate, ConfusionMatrix, IouReport, LayoutIouAccumulator, LayoutReport};
use nn_core::rng::stream;
use occ_core::io::{load_layout, load_panoptic, load_semantic, save_panoptic, save_semantic};
use occ_core::{BevLayout, GridSpec, LabelSchema, OrientedBox, SemanticOccupancyGrid};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use stoccdit::config::{load_json, DitConfig, DitTrainConfig, VaeConfig, VaeTrainConfig};
use stoccdit::experiment::reconstruction_report;
use stoccdit::train::{encode_means, latent_scale, Workers};
use stoccdit::{generate_dataset, rollout, train_dit, train_vae, DatasetConfig, LatentClip, OccVae, StOccDit};
use voxel_pipeline::io::{load_lpcd, save_lpcd};
use voxel_pipeline::{remove_points_in_boxes, resample_occupancy, voxelize_majority, EgoShift};

use crate::checks::{selftest_suite, Check, ControlFault};
use crate::dataset::{frame_stem, list_files, load_dataset, write_dataset, Dataset};
use crate::manifest::{sha256_file, write_manifest};
use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "occgen", version, about = "Layout-conditioned semantic occupancy generation toolkit")]
pub struct Cli {
    /// Root seed; every stage derives named sub-streams from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural dataset of paired occupancy grids and layouts.
    SynthDataset(SynthArgs),
    /// Majority-vote voxelization of a labeled point cloud.
    Voxelize(VoxelizeArgs),
    /// Shift the scene content of a grid (ego-path editing).
    Resample(ResampleArgs),
    /// Drop every point of a cloud that lies inside any of the given boxes.
    Remove(RemoveArgs),
    /// Render semantic, coordinate and Plücker buffers for a camera rig.
    Render(RenderArgs),
    /// Occupancy and layout-consistency metrics.
    Metrics(MetricsArgs),
    /// Train the occupancy VAE.
    TrainVae(TrainVaeArgs),
    /// Train the spatio-temporal diffusion transformer on VAE latents.
    TrainDit(TrainDitArgs),
    /// Roll out occupancy frames from a layout sequence.
    Generate(GenerateArgs),
    /// Emit a surround or densification call plan.
    Plan(PlanArgs),
    /// Zero-initialization identity of the control branch.
    ControlCheck(ControlCheckArgs),
    /// Run the invariant suite.
    Selftest(SelftestArgs),
    /// Layouts to occupancy, rendered buffers, call plan and metrics.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    /// Full-scale transformer constants; recorded for reference and far
    /// beyond a desk-scale budget.
    Full,
}

#[derive(Debug, Args)]
pub struct SchemaArg {
    /// `toy`, `nuscenes` or a schema JSON file.
    #[arg(long, default_value = "toy")]
    pub schema: String,
}

impl SchemaArg {
    pub fn load(&self) -> Result<LabelSchema> {
        let schema = match self.schema.as_str() {
            "toy" => LabelSchema::toy(),
            "nuscenes" => LabelSchema::nuscenes_default(),
            path => LabelSchema::load(Path::new(path))?,
        };
        schema.validate()?;
        Ok(schema)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset config JSON; missing fields keep the toy preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub val_scenes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [200, 200, 16])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0.4)]
    pub voxel_size: f64,
    #[arg(long, default_value_t = -1.0)]
    pub z_min: f64,
    /// Also write the semantic grid under this schema.
    #[arg(long)]
    pub semantic: bool,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RemoveArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// JSON array of oriented boxes.
    #[arg(long)]
    pub boxes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Translation of the scene content in metres.
    #[arg(long, num_args = 3, value_names = ["DX", "DY", "DZ"], allow_negative_numbers = true)]
    pub shift: Vec<f64>,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RigArgs {
    /// Rig JSON; defaults to a six-camera surround rig at the grid centre.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 32.0)]
    pub focal: f64,
    #[arg(long, default_value_t = 1.5)]
    pub camera_height: f64,
    #[arg(long, default_value_t = 40.0)]
    pub max_range: f64,
}

impl RigArgs {
    pub fn load(&self) -> Result<CameraRig> {
        let rig = match &self.rig {
            Some(path) => load_rig(path)?,
            None => CameraRig::surround([0.0, 0.0, self.camera_height], 0.5, (self.focal, self.focal, self.width, self.height)),
        };
        rig.validate()?;
        Ok(rig)
    }

    fn config(&self) -> Result<Value> {
        Ok(match &self.rig {
            Some(p) => json!({ "rig": input(p)?, "max_range": self.max_range }),
            None => json!({
                "rig": "surround", "width": self.width, "height": self.height, "focal": self.focal,
                "camera_height": self.camera_height, "max_range": self.max_range,
            }),
        })
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[command(flatten)]
    pub rig: RigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted OCCG file or directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth OCCG file or directory, paired with `--pred` by sorted name.
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional BEVL file or directory paired with the predictions.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Report directory; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory written by `synth-dataset`; generated in memory
    /// from `--dataset-config` (or the toy preset) when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub dataset_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainVaeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// VAE architecture JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// VAE training JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainDitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    pub preset: Preset,
    /// DiT architecture JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// DiT training JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub phase1_epochs: Option<usize>,
    #[arg(long)]
    pub phase2_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub dit: PathBuf,
    /// Euler steps; the checkpoint's setting when omitted.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Guidance weight; the checkpoint's setting when omitted.
    #[arg(long, allow_negative_numbers = true)]
    pub cfg_scale: Option<f64>,
    /// Grid floor height; the voxel size is the layout resolution.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub z_min: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// BEVL file or directory, one layout per frame in name order.
    #[arg(long)]
    pub layouts: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub rig: RigArgs,
    /// Virtual cameras per adjacent pair; 0 plans the surround schedule.
    #[arg(long, default_value_t = 0)]
    pub densify: usize,
    /// The first call is anchored on an externally supplied front image.
    #[arg(long)]
    pub start_image: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ControlCheckArgs {
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    HintScale,
    LiveProjection,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Mutation probe: run the suite against a deliberately altered control branch.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub layouts: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub rig: RigArgs,
    /// Ground-truth OCCG file or directory for the metrics report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command. `Ok(false)` means the command ran but a check it
/// performs failed.
pub fn run(cli: Cli) -> Result<bool> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let ctx = Ctx { seed: cli.seed, threads: cli.threads };
    match cli.command {
        Command::SynthDataset(a) => synth_dataset(&ctx, &a),
        Command::Voxelize(a) => voxelize(&ctx, &a),
        Command::Resample(a) => resample(&ctx, &a),
        Command::Remove(a) => remove(&ctx, &a),
        Command::Render(a) => render(&ctx, &a),
        Command::Metrics(a) => metrics(&ctx, &a),
        Command::TrainVae(a) => cmd_train_vae(&ctx, &a),
        Command::TrainDit(a) => cmd_train_dit(&ctx, &a),
        Command::Generate(a) => generate(&ctx, &a),
        Command::Plan(a) => plan(&ctx, &a),
        Command::ControlCheck(a) => cmd_control_check(&ctx, &a),
        Command::Selftest(a) => selftest(&ctx, &a),
        Command::Pipeline(a) => pipeline(&ctx, &a),
    }
}

struct Ctx {
    seed: Option<u64>,
    threads: usize,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn manifest(&self, dir: &Path, command: &str, seed: u64, config: Value) -> Result<()> {
        write_manifest(dir, command, seed, self.threads, config)?;
        Ok(())
    }
}

/// Input path with its checksum, for manifests.
fn input(path: &Path) -> Result<Value> {
    if path.is_dir() {
        let files: Vec<Value> = crate::manifest::artifacts(path)?
            .into_iter()
            .map(|a| json!({ "path": a.path, "sha256": a.sha256 }))
            .collect();
        return Ok(json!({ "path": path.display().to_string(), "files": files }));
    }
    Ok(json!({ "path": path.display().to_string(), "sha256": sha256_file(path)? }))
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Preset overlaid with the fields present in an optional JSON file.
fn layered<T: Serialize + DeserializeOwned>(preset: T, json: Option<&Path>) -> Result<T> {
    let Some(path) = json else { return Ok(preset) };
    let mut value = serde_json::to_value(&preset)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    merge(&mut value, serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    serde_json::from_value(value).with_context(|| format!("applying {}", path.display()))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `report` to `out/name` with a manifest, or pretty-prints it to stdout.
fn emit<T: Serialize>(ctx: &Ctx, out: Option<&Path>, name: &str, command: &str, config: Value, report: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    match out {
        Some(dir) => {
            create_out(dir)?;
            fs::write(dir.join(name), text)?;
            ctx.manifest(dir, command, ctx.seed(), config)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth_dataset(ctx: &Ctx, a: &SynthArgs) -> Result<bool> {
    let mut cfg = layered(DatasetConfig::toy(), a.config.as_deref())?;
    if let Some(v) = a.scenes {
        cfg.scenes = v;
        cfg.val_scenes = cfg.val_scenes.min(v.saturating_sub(1));
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.val_scenes {
        cfg.val_scenes = v;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let schema = LabelSchema::toy();
    let scenes = generate_dataset(&cfg)?;
    create_out(&a.out)?;
    write_dataset(&a.out, &cfg, &schema, &scenes)?;

    // The generator writes grids and layouts from the same footprints, so
    // agent channels must agree exactly.
    let mut acc = LayoutIouAccumulator::new(schema.layout_channels as usize);
    for s in &scenes {
        for f in &s.frames {
            acc.accumulate(&f.grid, &f.layout, &schema)?;
        }
    }
    let per_channel = acc.report().per_channel;
    let agent: Vec<Option<f64>> = schema.agent_channels.iter().map(|&c| per_channel[c as usize]).collect();
    ctx.manifest(&a.out, "synth-dataset", cfg.seed, json!({ "dataset": cfg }))?;
    let report = json!({
        "scenes": cfg.scenes, "frames": cfg.frames, "pairs": cfg.scenes * cfg.frames,
        "agent_layout_iou": agent,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(agent.iter().flatten().all(|&v| v == 1.0))
}

fn voxelize(ctx: &Ctx, a: &VoxelizeArgs) -> Result<bool> {
    let dims: [usize; 3] = a.dims.as_slice().try_into().map_err(|_| anyhow!("--dims takes three values"))?;
    let spec = GridSpec::centered(dims, a.voxel_size, a.z_min);
    spec.validate()?;
    let cloud = load_lpcd(&a.cloud)?;
    let grid = voxelize_majority(&cloud, &spec)?;
    create_out(&a.out)?;
    save_panoptic(&a.out.join("panoptic.occg"), &grid)?;
    let schema = a.schema.load()?;
    if a.semantic {
        save_semantic(&a.out.join("semantic.occg"), &grid.to_semantic(&schema))?;
    }
    let config = json!({
        "cloud": input(&a.cloud)?, "dims": dims, "voxel_size": a.voxel_size, "z_min": a.z_min,
        "semantic": a.semantic, "schema": schema.name,
    });
    ctx.manifest(&a.out, "voxelize", ctx.seed(), config)?;
    Ok(true)
}

/// Loads a semantic grid, falling back to the panoptic codec mapped through
/// the schema.
fn load_grid(path: &Path, schema: &LabelSchema) -> Result<SemanticOccupancyGrid> {
    match load_semantic(path, schema) {
        Ok(g) => Ok(g),
        Err(semantic_err) => match load_panoptic(path) {
            Ok(p) => Ok(p.to_semantic(schema)),
            Err(_) => Err(semantic_err).with_context(|| format!("reading {}", path.display())),
        },
    }
}

fn resample(ctx: &Ctx, a: &ResampleArgs) -> Result<bool> {
    let shift: [f64; 3] = a.shift.as_slice().try_into().map_err(|_| anyhow!("--shift takes three values"))?;
    let schema = a.schema.load()?;
    let grid = load_grid(&a.grid, &schema)?;
    let moved = resample_occupancy(&grid, &EgoShift::translation(shift), schema.free_class);
    create_out(&a.out)?;
    save_semantic(&a.out.join("grid.occg"), &moved)?;
    let config = json!({ "grid": input(&a.grid)?, "shift": shift, "schema": schema.name });
    ctx.manifest(&a.out, "resample", ctx.seed(), config)?;
    Ok(true)
}

fn remove(ctx: &Ctx, a: &RemoveArgs) -> Result<bool> {
    let cloud = load_lpcd(&a.cloud)?;
    let boxes: Vec<OrientedBox> = load_json(&a.boxes).with_context(|| format!("reading {}", a.boxes.display()))?;
    for b in &boxes {
        b.validate()?;
    }
    let kept = remove_points_in_boxes(&cloud, &boxes);
    create_out(&a.out)?;
    save_lpcd(&a.out.join("cloud.lpcd"), &kept)?;
    let config = json!({
        "cloud": input(&a.cloud)?, "boxes": input(&a.boxes)?,
        "points_in": cloud.points.len(), "points_out": kept.points.len(),
    });
    ctx.manifest(&a.out, "remove", ctx.seed(), config)?;
    Ok(true)
}

/// Buffers for every camera, in rig order.
fn render_rig(grid: &SemanticOccupancyGrid, free: u8, rig: &CameraRig, max_range: f64, threads: usize) -> Result<Vec<GeometryBuffers>> {
    let workers = Workers::new(threads)?;
    Ok(workers.map(&rig.cameras, |cam| raycast_buffers(grid, free, cam, max_range)))
}

fn save_buffers(dir: &Path, role: CameraRole, b: &GeometryBuffers) -> Result<()> {
    save_semantic_png(&dir.join(format!("{role}.png")), b)?;
    save_cbuf(&dir.join(format!("{role}.cbuf")), b)?;
    save_plkb(&dir.join(format!("{role}.plkb")), b)?;
    Ok(())
}

fn render(ctx: &Ctx, a: &RenderArgs) -> Result<bool> {
    let schema = a.schema.load()?;
    let grid = load_grid(&a.grid, &schema)?;
    let rig = a.rig.load()?;
    create_out(&a.out)?;
    let buffers = render_rig(&grid, schema.free_class, &rig, a.rig.max_range, ctx.threads)?;
    for (cam, b) in rig.cameras.iter().zip(&buffers) {
        save_buffers(&a.out, cam.role, b)?;
    }
    save_rig(&a.out.join("rig.json"), &rig)?;
    let config = json!({ "grid": input(&a.grid)?, "schema": schema.name, "rig": a.rig.config()? });
    ctx.manifest(&a.out, "render", ctx.seed(), config)?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub miou: Option<f64>,
    pub iou: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub bev_topdown: IouReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bev_vs_layout: Option<LayoutReport>,
}

pub fn metrics_report(
    pred: &[SemanticOccupancyGrid],
    gt: &[SemanticOccupancyGrid],
    layouts: Option<&[BevLayout]>,
    schema: &LabelSchema,
) -> Result<MetricsReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        bail!("{} predicted vs {} ground-truth grids", pred.len(), gt.len());
    }
    let c = schema.num_classes();
    let mut voxel = ConfusionMatrix::new(c);
    let mut bev = ConfusionMatrix::new(c);
    for (p, g) in pred.iter().zip(gt) {
        losses_metrics::confusion_accumulate(p, g, &mut voxel)?;
        bev_topdown_accumulate(p, g, schema, &mut bev)?;
    }
    let bev_vs_layout = match layouts {
        Some(ls) => {
            if ls.len() != pred.len() {
                bail!("{} layouts for {} grids", ls.len(), pred.len());
            }
            let mut acc = LayoutIouAccumulator::new(schema.layout_channels as usize);
            for (p, l) in pred.iter().zip(ls) {
                acc.accumulate(p, l, schema)?;
            }
            Some(acc.report())
        }
        None => None,
    };
    let r = IouReport::from_matrix(&voxel, schema);
    Ok(MetricsReport {
        frames: pred.len(),
        miou: r.miou,
        iou: r.iou,
        per_class: r.per_class,
        bev_topdown: IouReport::from_matrix(&bev, schema),
        bev_vs_layout,
    })
}

fn load_grids(path: &Path, schema: &LabelSchema) -> Result<Vec<SemanticOccupancyGrid>> {
    list_files(path, "occg")?.iter().map(|p| load_grid(p, schema)).collect()
}

fn load_layouts(path: &Path) -> Result<Vec<BevLayout>> {
    Ok(list_files(path, "bevl")?.iter().map(|p| load_layout(p)).collect::<occ_core::Result<_>>()?)
}

fn metrics(ctx: &Ctx, a: &MetricsArgs) -> Result<bool> {
    let schema = a.schema.load()?;
    let pred = load_grids(&a.pred, &schema)?;
    let gt = load_grids(&a.gt, &schema)?;
    let layouts = a.layout.as_deref().map(load_layouts).transpose()?;
    let report = metrics_report(&pred, &gt, layouts.as_deref(), &schema)?;
    let mut config = json!({ "pred": input(&a.pred)?, "gt": input(&a.gt)?, "schema": schema.name });
    if let Some(l) = &a.layout {
        config["layout"] = input(l)?;
    }
    emit(ctx, a.out.as_deref(), "metrics.json", "metrics", config, &report)?;
    Ok(true)
}

/// Dataset from a directory, or generated from a config layered on the toy preset.
fn dataset(ctx: &Ctx, a: &DataArgs) -> Result<(Dataset, Value)> {
    match &a.data {
        Some(dir) => {
            let d = load_dataset(dir)?;
            let cfg = json!({ "data": input(dir)? });
            Ok((d, cfg))
        }
        None => {
            let mut cfg = layered(DatasetConfig::toy(), a.dataset_config.as_deref())?;
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let scenes = generate_dataset(&cfg)?
                .into_iter()
                .map(|s| crate::dataset::SceneFrames {
                    grids: s.frames.iter().map(|f| f.grid.clone()).collect(),
                    layouts: s.frames.into_iter().map(|f| f.layout).collect(),
                })
                .collect();
            let value = json!({ "dataset": cfg });
            Ok((Dataset { config: cfg, schema: LabelSchema::toy(), scenes }, value))
        }
    }
}

fn progress(phase: &str, s: &stoccdit::train::StepLog) {
    if s.step % 50 == 0 {
        eprintln!("{phase} epoch {} step {} loss {:.4} lr {:.2e}", s.epoch, s.step, s.loss, s.lr);
    }
}

fn cmd_train_vae(ctx: &Ctx, a: &TrainVaeArgs) -> Result<bool> {
    let (data, data_cfg) = dataset(ctx, &a.data)?;
    let vae_cfg = layered(VaeConfig::toy(), a.config.as_deref())?;
    let mut train_cfg = layered(VaeTrainConfig::toy(), a.train_config.as_deref())?;
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    if let Some(s) = ctx.seed {
        train_cfg.seed = s;
    }
    vae_cfg.validate()?;
    let seed = train_cfg.seed;
    let train: Vec<SemanticOccupancyGrid> =
        data.scenes[data.config.train_range()].iter().flat_map(|s| s.grids.iter().cloned()).collect();
    let mut vae = OccVae::new(vae_cfg.clone(), &mut stream(seed, "vae-init"))?;
    let log = train_vae(&mut vae, &train, &train_cfg, ctx.threads, |s| progress("vae", s))?;
    let refs: Vec<&SemanticOccupancyGrid> = train.iter().collect();
    let scale = latent_scale(&encode_means(&vae, &refs, ctx.threads)?);
    let val: Vec<&SemanticOccupancyGrid> = data.scenes[data.config.val_range()].iter().flat_map(|s| s.grids.iter()).collect();
    let val_report = reconstruction_report(&vae, &val, &data.schema)?;

    create_out(&a.out)?;
    vae.save(&a.out.join("vae.pkpt"), scale)?;
    fs::write(a.out.join("train_log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
    let report = json!({ "latent_scale": scale, "val": val_report, "epoch_means": log.epoch_means });
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let config = json!({ "data": data_cfg, "vae": vae_cfg, "train": train_cfg });
    ctx.manifest(&a.out, "train-vae", seed, config)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(true)
}

fn cmd_train_dit(ctx: &Ctx, a: &TrainDitArgs) -> Result<bool> {
    let (data, data_cfg) = dataset(ctx, &a.data)?;
    let (vae, scale) = OccVae::load(&a.vae)?;
    let preset = match a.preset {
        Preset::Toy => DitConfig::toy(),
        Preset::Full => DitConfig::full_scale(),
    };
    let dit_cfg = layered(preset, a.config.as_deref())?;
    let mut train_cfg = layered(DitTrainConfig::toy(), a.train_config.as_deref())?;
    if let Some(e) = a.phase1_epochs {
        train_cfg.phase1_epochs = e;
    }
    if let Some(e) = a.phase2_epochs {
        train_cfg.phase2_epochs = e;
    }
    if let Some(s) = ctx.seed {
        train_cfg.seed = s;
    }
    dit_cfg.validate()?;
    let seed = train_cfg.seed;
    if vae.config.grid_dims != data.config.grid_dims {
        bail!("VAE grid {:?} differs from the dataset grid {:?}", vae.config.grid_dims, data.config.grid_dims);
    }
    let scenes = &data.scenes[data.config.train_range()];
    let grids: Vec<&SemanticOccupancyGrid> = scenes.iter().flat_map(|s| s.grids.iter()).collect();
    let means = encode_means(&vae, &grids, ctx.threads)?;
    let frames = data.config.frames;
    let clips: Vec<LatentClip> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| LatentClip {
            latents: means[i * frames..(i + 1) * frames].iter().map(|m| m.scale(scale)).collect(),
            layouts: s.layouts.clone(),
        })
        .collect();
    let mut dit = StOccDit::new(dit_cfg.clone(), &mut stream(seed, "dit-init"))?;
    let log = train_dit(&mut dit, &clips, &train_cfg, &data.schema.rare_channels, ctx.threads, |s| progress("dit", s))?;

    create_out(&a.out)?;
    dit.save(&a.out.join("dit.pkpt"))?;
    fs::write(a.out.join("train_log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
    let config = json!({ "data": data_cfg, "vae": input(&a.vae)?, "dit": dit_cfg, "train": train_cfg });
    ctx.manifest(&a.out, "train-dit", seed, config)?;
    println!("{}", serde_json::to_string_pretty(&json!({ "epoch_means": log.epoch_means }))?);
    Ok(true)
}

struct Models {
    vae: OccVae,
    scale: f64,
    dit: StOccDit,
    steps: usize,
    cfg_scale: f64,
}

impl SamplingArgs {
    fn load(&self) -> Result<Models> {
        let (vae, scale) = OccVae::load(&self.vae)?;
        let dit = StOccDit::load(&self.dit)?;
        if dit.config.latent_channels != vae.config.latent_channels || dit.config.token_side != vae.config.latent_dims()[0] {
            bail!("DiT and VAE latent shapes disagree");
        }
        let steps = self.steps.unwrap_or(dit.config.euler_steps);
        let cfg_scale = self.cfg_scale.unwrap_or(dit.config.cfg_scale);
        Ok(Models { vae, scale, dit, steps, cfg_scale })
    }

    fn config(&self, m: &Models) -> Result<Value> {
        Ok(json!({
            "vae": input(&self.vae)?, "dit": input(&self.dit)?, "steps": m.steps,
            "cfg_scale": m.cfg_scale, "z_min": self.z_min,
        }))
    }
}

/// Rolls out one grid per layout and writes `frames/frame_NN.occg`.
fn roll(m: &Models, layouts: &[BevLayout], z_min: f64, seed: u64, out: &Path) -> Result<Vec<SemanticOccupancyGrid>> {
    let first = layouts.first().ok_or_else(|| anyhow!("no layouts"))?;
    let spec = GridSpec::centered(m.vae.config.grid_dims, first.spec.resolution, z_min);
    spec.validate()?;
    let r = rollout(&m.vae, m.scale, &m.dit, layouts, spec, m.steps, m.cfg_scale, seed)?;
    let dir = out.join("frames");
    create_out(&dir)?;
    for (t, g) in r.grids.iter().enumerate() {
        save_semantic(&dir.join(frame_stem(t) + ".occg"), g)?;
    }
    Ok(r.grids)
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<bool> {
    let m = a.sampling.load()?;
    let layouts = load_layouts(&a.layouts)?;
    create_out(&a.out)?;
    roll(&m, &layouts, a.sampling.z_min, ctx.seed(), &a.out)?;
    let config = json!({ "layouts": input(&a.layouts)?, "sampling": a.sampling.config(&m)? });
    ctx.manifest(&a.out, "generate", ctx.seed(), config)?;
    Ok(true)
}

fn plan_for(rig: &CameraRig, densify: usize, start_image: bool) -> Result<(SurroundPlan, Option<CameraRig>)> {
    if densify == 0 {
        let plan = plan_surround(rig, start_image)?;
        validate_plan(&plan, &[], Some(&CameraRole::BASE))?;
        Ok((plan, None))
    } else {
        let (dense, plan) = plan_densify(rig, densify)?;
        let external: Vec<CameraRole> = rig.cameras.iter().map(|c| c.role).collect();
        let new: Vec<CameraRole> = dense.cameras.iter().map(|c| c.role).filter(|r| !external.contains(r)).collect();
        validate_plan(&plan, &external, Some(&new))?;
        Ok((plan, Some(dense)))
    }
}

fn plan(ctx: &Ctx, a: &PlanArgs) -> Result<bool> {
    let rig = a.rig.load()?;
    let (plan, dense) = plan_for(&rig, a.densify, a.start_image)?;
    let config = json!({ "rig": a.rig.config()?, "densify": a.densify, "start_image": a.start_image });
    match &a.out {
        Some(dir) => {
            create_out(dir)?;
            fs::write(dir.join("plan.json"), plan.to_json()? + "\n")?;
            if let Some(d) = dense {
                save_rig(&dir.join("rig.json"), &d)?;
            }
            ctx.manifest(dir, "plan", ctx.seed(), config)?;
        }
        None => println!("{}", plan.to_json()?),
    }
    Ok(true)
}

fn cmd_control_check(ctx: &Ctx, a: &ControlCheckArgs) -> Result<bool> {
    let report = control_check(ctx.seed(), a.trials)?;
    emit(ctx, a.out.as_deref(), "control.json", "control-check", json!({ "trials": a.trials }), &report)?;
    Ok(report.passed)
}

#[derive(Debug, Serialize)]
struct SelftestReport {
    passed: bool,
    checks: Vec<Check>,
}

fn selftest(ctx: &Ctx, a: &SelftestArgs) -> Result<bool> {
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::HintScale => ControlFault::HintScale,
        FaultArg::LiveProjection => ControlFault::LiveProjection,
    });
    let checks = selftest_suite(ctx.seed(), fault)?;
    for c in &checks {
        eprintln!("{}", c.line());
    }
    let passed = checks.iter().all(|c| c.passed);
    eprintln!("selftest: {}", if passed { "all checks passed" } else { "FAILED" });
    let config = json!({ "inject_fault": a.inject_fault.map(|f| format!("{f:?}")) });
    emit(ctx, a.out.as_deref(), "selftest.json", "selftest", config, &SelftestReport { passed, checks })?;
    Ok(passed)
}

fn pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<bool> {
    let schema = a.schema.load()?;
    let m = a.sampling.load()?;
    let layouts = load_layouts(&a.layouts)?;
    let rig = a.rig.load()?;
    let gt = a.gt.as_deref().map(|p| load_grids(p, &schema)).transpose()?;
    create_out(&a.out)?;

    let grids = roll(&m, &layouts, a.sampling.z_min, ctx.seed(), &a.out)?;
    for (t, g) in grids.iter().enumerate() {
        let dir = a.out.join("buffers").join(frame_stem(t));
        create_out(&dir)?;
        let buffers = render_rig(g, schema.free_class, &rig, a.rig.max_range, ctx.threads)?;
        for (cam, b) in rig.cameras.iter().zip(&buffers) {
            save_buffers(&dir, cam.role, b)?;
        }
    }
    save_rig(&a.out.join("rig.json"), &rig)?;
    let (plan, _) = plan_for(&rig, 0, false)?;
    fs::write(a.out.join("plan.json"), plan.to_json()? + "\n")?;

    // Layout consistency needs no ground truth; the rest does.
    let agent_iou = {
        let mut acc = LayoutIouAccumulator::new(schema.layout_channels as usize);
        for (g, l) in grids.iter().zip(&layouts) {
            acc.accumulate(g, l, &schema)?;
        }
        acc.report()
    };
    let report = match &gt {
        Some(gt) => serde_json::to_value(metrics_report(&grids, gt, Some(&layouts), &schema)?)?,
        None => json!({ "frames": grids.len(), "bev_vs_layout": agent_iou }),
    };
    fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;

    let mut config = json!({
        "layouts": input(&a.layouts)?, "sampling": a.sampling.config(&m)?, "rig": a.rig.config()?,
        "schema": schema.name,
    });
    if let Some(p) = &a.gt {
        config["gt"] = input(p)?;
    }
    ctx.manifest(&a.out, "pipeline", ctx.seed(), config)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(true)
}
