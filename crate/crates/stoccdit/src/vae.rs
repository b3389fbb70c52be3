//! Toy occupancy VAE.
//!
//! Each voxel label is replaced by a learnable `C'`-dimensional class
//! embedding and the `Z` embeddings of a column are concatenated bottom-up,
//! giving an `X × Y × (Z·C')` map. The encoder applies stride-2
//! space-to-depth stages (each a linear projection plus a residual MLP),
//! then axial attention, then a linear head producing `(mu, logvar)`. The
//! decoder mirrors this and emits `Z · num_classes` logits per cell.

use std::path::Path;

use losses_metrics::{focal_loss, kl_standard_normal, lovasz_softmax, softmax, softmax_backward};
use nn_core::checkpoint::{find, load_module, load_pkpt, module_tensors, save_pkpt};
use nn_core::param::join;
use nn_core::{Linear, Module, Param, Tensor};
use occ_core::{GridSpec, SemanticOccupancyGrid};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{VaeConfig, VaeTrainConfig};
use crate::error::{Result, StError};
use crate::layers::{depth_to_space, space_to_depth, AxialAttention, AxialCache, ResMlp, ResMlpCache};

/// Concatenates per-voxel class embeddings along each column, `z` ascending:
/// cell `c` of the output holds `[emb[l(c, 0)], emb[l(c, 1)], …]`.
pub fn vae_flatten(grid: &SemanticOccupancyGrid, embeddings: &Tensor) -> Result<Tensor> {
    let classes = embeddings.rows();
    let e = embeddings.cols();
    if let Some(&l) = grid.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(StError::Shape(format!("label {l} outside a {classes}-row embedding table")));
    }
    let [nx, ny, nz] = grid.spec.dims;
    let mut out = Vec::with_capacity(grid.labels.len() * e);
    for &l in &grid.labels {
        out.extend_from_slice(embeddings.row(l as usize));
    }
    Ok(Tensor::from_vec(&[nx * ny, nz * e], out)?)
}

/// Per-voxel argmax over `[voxels, classes]` logits; ties go to the smaller class.
pub fn argmax_labels(logits: &Tensor) -> Vec<u8> {
    logits
        .data()
        .chunks_exact(logits.cols())
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DownStage {
    pub proj: Linear,
    pub mix: ResMlp,
}

#[derive(Debug, Clone)]
pub struct UpStage {
    pub mix: ResMlp,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct OccVae {
    pub config: VaeConfig,
    pub class_embed: Param,
    pub down: Vec<DownStage>,
    pub enc_attn: AxialAttention,
    pub enc_out: Linear,
    pub dec_in: Linear,
    pub dec_attn: AxialAttention,
    pub up: Vec<UpStage>,
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    labels: Vec<u8>,
    stage_in: Vec<Tensor>,
    stage_mix: Vec<ResMlpCache>,
    attn: AxialCache,
    head_in: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecodeCache {
    z: Tensor,
    attn: AxialCache,
    stage_mix: Vec<ResMlpCache>,
    stage_in: Vec<Tensor>,
}

/// Loss terms of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub focal: f64,
    pub lovasz: f64,
    pub kl: f64,
}

impl OccVae {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let [x, y, z] = config.grid_dims;
        let [lw, lh] = config.latent_dims();
        let widths = &config.stage_widths;
        let class_embed = Param::new(Tensor::randn(&[config.num_classes, config.class_embed_dim], 1.0, rng));
        let mut down = Vec::new();
        let mut input = z * config.class_embed_dim;
        for &w in widths {
            down.push(DownStage { proj: Linear::new(4 * input, w, rng), mix: ResMlp::new(w, config.mlp_mult, rng) });
            input = w;
        }
        let last = *widths.last().expect("validated");
        let enc_attn = AxialAttention::new(last, config.heads, lw, lh, rng);
        let enc_out = Linear::with_std(last, 2 * config.latent_channels, 0.1 / (last as f64).sqrt(), rng);
        let dec_in = Linear::new(config.latent_channels, last, rng);
        let dec_attn = AxialAttention::new(last, config.heads, lw, lh, rng);
        let mut up = Vec::new();
        for s in (0..widths.len()).rev() {
            let out = if s == 0 { z * config.num_classes } else { widths[s - 1] };
            up.push(UpStage { mix: ResMlp::new(widths[s], config.mlp_mult, rng), proj: Linear::new(widths[s], 4 * out, rng) });
        }
        debug_assert_eq!(x % config.spatial_downsample + y % config.spatial_downsample, 0);
        Ok(Self { config, class_embed, down, enc_attn, enc_out, dec_in, dec_attn, up })
    }

    fn stage_dims(&self, s: usize) -> [usize; 2] {
        // Input map size of down-stage `s`.
        let [x, y, _] = self.config.grid_dims;
        [x >> s, y >> s]
    }

    pub fn flatten(&self, grid: &SemanticOccupancyGrid) -> Result<Tensor> {
        let [x, y, z] = self.config.grid_dims;
        if grid.spec.dims != [x, y, z] {
            return Err(StError::Shape(format!("grid {:?}, VAE expects {:?}", grid.spec.dims, self.config.grid_dims)));
        }
        vae_flatten(grid, &self.class_embed.value)
    }

    /// `(mu, logvar)`, each `[h·w, C_z]`.
    pub fn encode(&self, grid: &SemanticOccupancyGrid) -> Result<(Tensor, Tensor, EncodeCache)> {
        let mut h = self.flatten(grid)?;
        let mut stage_in = Vec::new();
        let mut stage_mix = Vec::new();
        for (s, stage) in self.down.iter().enumerate() {
            let [w, hh] = self.stage_dims(s);
            let packed = space_to_depth(&h, w, hh, 2);
            let p = stage.proj.forward(&packed);
            let (m, mc) = stage.mix.forward(&p);
            stage_in.push(packed);
            stage_mix.push(mc);
            h = m;
        }
        let (a, attn) = self.enc_attn.forward(&h)?;
        let out = self.enc_out.forward(&a);
        let c = self.config.latent_channels;
        let (mu, logvar) = (out.slice_cols(0, c), out.slice_cols(c, 2 * c));
        Ok((mu, logvar, EncodeCache { labels: grid.labels.clone(), stage_in, stage_mix, attn, head_in: a }))
    }

    /// `z = mu + exp(logvar / 2) ⊙ n`.
    pub fn reparameterize(mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Tensor {
        let mut z = mu.clone();
        for ((z, &lv), &n) in z.data_mut().iter_mut().zip(logvar.data()).zip(noise.data()) {
            *z += (0.5 * lv).exp() * n;
        }
        z
    }

    /// Per-voxel logits `[X·Y·Z, classes]` in grid storage order.
    pub fn decode(&self, z: &Tensor) -> Result<(Tensor, DecodeCache)> {
        let [lw, lh] = self.config.latent_dims();
        if z.rows() != lw * lh || z.cols() != self.config.latent_channels {
            return Err(StError::Shape(format!("latent {:?}, expected [{}, {}]", z.shape(), lw * lh, self.config.latent_channels)));
        }
        let h = self.dec_in.forward(z);
        let (mut h, attn) = self.dec_attn.forward(&h)?;
        let mut stage_mix = Vec::new();
        let mut stage_in = Vec::new();
        let n = self.up.len();
        for (k, stage) in self.up.iter().enumerate() {
            let s = n - 1 - k;
            let [w, hh] = self.stage_dims(s);
            let (m, mc) = stage.mix.forward(&h);
            let p = stage.proj.forward(&m);
            stage_mix.push(mc);
            stage_in.push(m);
            h = depth_to_space(&p, w, hh, 2);
        }
        let logits = h.reshape(&[self.voxels(), self.config.num_classes])?;
        Ok((logits, DecodeCache { z: z.clone(), attn, stage_mix, stage_in }))
    }

    fn voxels(&self) -> usize {
        self.config.grid_dims.iter().product()
    }

    /// Accumulates decoder gradients and returns `dz`.
    pub fn decode_backward(&mut self, cache: &DecodeCache, dlogits: &Tensor) -> Tensor {
        let [x, y, z] = self.config.grid_dims;
        let mut dh = dlogits.clone().reshape(&[x * y, z * self.config.num_classes]).expect("logit shape");
        let n = self.up.len();
        for k in (0..n).rev() {
            let s = n - 1 - k;
            let [w, hh] = self.stage_dims(s);
            let dp = space_to_depth(&dh, w, hh, 2);
            let stage = &mut self.up[k];
            let dm = stage.proj.backward(&cache.stage_in[k], &dp);
            dh = stage.mix.backward(&cache.stage_mix[k], &dm);
        }
        let dh = self.dec_attn.backward(&cache.attn, &dh);
        self.dec_in.backward(&cache.z, &dh)
    }

    /// Accumulates encoder and embedding gradients.
    pub fn encode_backward(&mut self, cache: &EncodeCache, dmu: &Tensor, dlogvar: &Tensor) {
        let dout = Tensor::hstack(&[dmu, dlogvar]);
        let da = self.enc_out.backward(&cache.head_in, &dout);
        let mut dh = self.enc_attn.backward(&cache.attn, &da);
        for s in (0..self.down.len()).rev() {
            let [w, hh] = self.stage_dims(s);
            let stage = &mut self.down[s];
            let dp = stage.mix.backward(&cache.stage_mix[s], &dh);
            let dpacked = stage.proj.backward(&cache.stage_in[s], &dp);
            dh = depth_to_space(&dpacked, w, hh, 2);
        }
        let e = self.config.class_embed_dim;
        let grad = self.class_embed.grad.data_mut();
        for (v, &l) in dh.data().chunks_exact(e).zip(&cache.labels) {
            let row = &mut grad[l as usize * e..(l as usize + 1) * e];
            for (g, d) in row.iter_mut().zip(v) {
                *g += d;
            }
        }
    }

    /// Reconstruction from the posterior mean.
    pub fn reconstruct(&self, grid: &SemanticOccupancyGrid) -> Result<SemanticOccupancyGrid> {
        let (mu, _, _) = self.encode(grid)?;
        self.decode_grid(&mu, grid.spec)
    }

    pub fn decode_grid(&self, z: &Tensor, spec: GridSpec) -> Result<SemanticOccupancyGrid> {
        let (logits, _) = self.decode(z)?;
        Ok(SemanticOccupancyGrid { spec, labels: argmax_labels(&logits) })
    }

    /// Focal + λ_lov·Lovász + λ_kl·KL for one grid; accumulates gradients.
    pub fn loss_and_grad(&mut self, grid: &SemanticOccupancyGrid, cfg: &VaeTrainConfig, rng: &mut impl Rng) -> Result<VaeLoss> {
        let classes = self.config.num_classes;
        let (mu, logvar, ec) = self.encode(grid)?;
        let noise: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        let noise = Tensor::from_vec(mu.shape(), noise)?;
        let z = Self::reparameterize(&mu, &logvar, &noise);
        let (logits, dc) = self.decode(&z)?;
        let (focal, mut dlogits) = focal_loss(logits.data(), &grid.labels, classes, cfg.focal_gamma, cfg.focal_alpha, None)?;
        let probs = softmax(logits.data(), classes);
        let (lovasz, dprobs) = lovasz_softmax(&probs, &grid.labels, classes)?;
        let dl = softmax_backward(&probs, &dprobs, classes);
        for (a, b) in dlogits.iter_mut().zip(&dl) {
            *a += cfg.lambda_lovasz * b;
        }
        let (kl, dmu_kl, dlv_kl) = kl_standard_normal(mu.data(), logvar.data())?;
        let dz = self.decode_backward(&dc, &Tensor::from_vec(logits.shape(), dlogits)?);
        let mut dmu = dz.clone();
        let mut dlv = dz;
        for i in 0..dmu.len() {
            let lv = logvar.data()[i];
            dlv.data_mut()[i] = dlv.data()[i] * noise.data()[i] * 0.5 * (0.5 * lv).exp() + cfg.lambda_kl * dlv_kl[i];
            dmu.data_mut()[i] += cfg.lambda_kl * dmu_kl[i];
        }
        self.encode_backward(&ec, &dmu, &dlv);
        let total = focal + cfg.lambda_lovasz * lovasz + cfg.lambda_kl * kl;
        Ok(VaeLoss { total, focal, lovasz, kl })
    }

    /// Writes weights plus `config` (JSON bytes) and `latent_scale` tensors.
    pub fn save(&self, path: &Path, latent_scale: f64) -> Result<()> {
        let mut tensors = module_tensors(self, "vae");
        tensors.push(("latent_scale".into(), Tensor::scalar(latent_scale)));
        tensors.push(("config".into(), json_tensor(&self.config)?));
        save_pkpt(path, &tensors)?;
        Ok(())
    }

    /// Returns the model and its latent scale.
    pub fn load(path: &Path) -> Result<(Self, f64)> {
        let tensors = load_pkpt(path)?;
        let config: VaeConfig = json_from_tensor(find(&tensors, "config"))?;
        let scale = find(&tensors, "latent_scale")
            .map(|t| t.data()[0])
            .ok_or_else(|| StError::Checkpoint("missing latent_scale".into()))?;
        let mut rng = nn_core::rng::stream(0, "vae-load");
        let mut vae = Self::new(config, &mut rng)?;
        load_module(&mut vae, "vae", &tensors)?;
        Ok((vae, scale))
    }
}

/// Stores JSON bytes as a 1-D tensor so configs travel inside checkpoints.
pub(crate) fn json_tensor<T: serde::Serialize>(value: &T) -> Result<Tensor> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Tensor::from_vec(&[bytes.len()], bytes.into_iter().map(f64::from).collect())?)
}

pub(crate) fn json_from_tensor<T: serde::de::DeserializeOwned>(t: Option<&Tensor>) -> Result<T> {
    let t = t.ok_or_else(|| StError::Checkpoint("missing config".into()))?;
    let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
    Ok(serde_json::from_slice(&bytes)?)
}

impl Module for OccVae {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "class_embed"), &self.class_embed);
        for (i, s) in self.down.iter().enumerate() {
            let p = join(prefix, &format!("down{i}"));
            s.proj.visit(&join(&p, "proj"), f);
            s.mix.visit(&join(&p, "mix"), f);
        }
        self.enc_attn.visit(&join(prefix, "enc_attn"), f);
        self.enc_out.visit(&join(prefix, "enc_out"), f);
        self.dec_in.visit(&join(prefix, "dec_in"), f);
        self.dec_attn.visit(&join(prefix, "dec_attn"), f);
        for (i, s) in self.up.iter().enumerate() {
            let p = join(prefix, &format!("up{i}"));
            s.mix.visit(&join(&p, "mix"), f);
            s.proj.visit(&join(&p, "proj"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "class_embed"), &mut self.class_embed);
        for (i, s) in self.down.iter_mut().enumerate() {
            let p = join(prefix, &format!("down{i}"));
            s.proj.visit_mut(&join(&p, "proj"), f);
            s.mix.visit_mut(&join(&p, "mix"), f);
        }
        self.enc_attn.visit_mut(&join(prefix, "enc_attn"), f);
        self.enc_out.visit_mut(&join(prefix, "enc_out"), f);
        self.dec_in.visit_mut(&join(prefix, "dec_in"), f);
        self.dec_attn.visit_mut(&join(prefix, "dec_attn"), f);
        for (i, s) in self.up.iter_mut().enumerate() {
            let p = join(prefix, &format!("up{i}"));
            s.mix.visit_mut(&join(&p, "mix"), f);
            s.proj.visit_mut(&join(&p, "proj"), f);
        }
    }
}
