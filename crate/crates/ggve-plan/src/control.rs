//! Hint injection into a transformer backbone through a control branch.
//!
//! The control branch embeds its hint inputs, fuses them with the main
//! token stream (`c ← before_proj(c) + x`), runs its own blocks and emits one
//! hint per block through a zero-initialized output projection. Backbone
//! block `ℓ` at injection slot `k` then receives `x_ℓ ← Block_ℓ(x_{ℓ−1}) + s·h_k`.

use geometry_render::GeometryBuffers;
use nn_core::param::join;
use nn_core::rng::stream;
use nn_core::{AttentionMask, Linear, Module, Param, Tensor, TransformerBlock};
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};

/// `{k·⌊L_b/L_c⌋ : k ∈ 0..L_c}`.
pub fn injection_indices(backbone_depth: usize, control_depth: usize) -> Result<Vec<usize>> {
    if control_depth == 0 || control_depth > backbone_depth {
        return Err(invalid(format!("control depth {control_depth} for backbone depth {backbone_depth}")));
    }
    let stride = backbone_depth / control_depth;
    Ok((0..control_depth).map(|k| k * stride).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HintSchedule {
    pub backbone_depth: usize,
    pub control_depth: usize,
    pub indices: Vec<usize>,
    pub scale: f64,
}

impl HintSchedule {
    pub fn new(backbone_depth: usize, control_depth: usize, scale: f64) -> Result<Self> {
        let indices = injection_indices(backbone_depth, control_depth)?;
        Ok(Self { backbone_depth, control_depth, indices, scale })
    }

    /// Hint slot injected after backbone block `layer`, if any.
    pub fn slot(&self, layer: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == layer)
    }
}

/// Plain stack of conditioned transformer blocks.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub blocks: Vec<TransformerBlock>,
}

impl Backbone {
    pub fn new(depth: usize, dim: usize, heads: usize, hidden: usize, cond_dim: usize, rng: &mut impl Rng) -> Self {
        Self { blocks: (0..depth).map(|_| TransformerBlock::new(dim, heads, hidden, cond_dim, rng)).collect() }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        cond: &[f64],
        mask: Option<&AttentionMask>,
        positions: Option<&[[f64; 2]]>,
    ) -> Result<Tensor> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.forward(&x, cond, mask, positions)?.0;
        }
        Ok(x)
    }
}

/// Per-token control inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HintInputs {
    /// `[N, C]`: clean latents at anchor tokens, zero at target tokens.
    pub latents: Tensor,
    /// `[N]`: 1 at anchor tokens.
    pub anchor_mask: Vec<f64>,
    /// `[N, classes·p²]` one-hot semantic buffer patches.
    pub semantic: Tensor,
    /// `[N, 3·p²]` coordinate buffer patches.
    pub coordinate: Tensor,
}

impl HintInputs {
    /// Patchifies rendered buffers into `patch × patch` tokens, row-major
    /// over the image; pixel order inside a patch is row-major too.
    pub fn buffer_tokens(buffers: &GeometryBuffers, classes: usize, patch: usize) -> Result<(Tensor, Tensor)> {
        let (w, h) = (buffers.width, buffers.height);
        if patch == 0 || w % patch != 0 || h % patch != 0 {
            return Err(invalid(format!("patch {patch} does not tile {w}×{h} buffers")));
        }
        let (tw, th, pp) = (w / patch, h / patch, patch * patch);
        let mut sem = Tensor::zeros(&[tw * th, classes * pp]);
        let mut coord = Tensor::zeros(&[tw * th, 3 * pp]);
        for py in 0..h {
            for px in 0..w {
                let token = (py / patch) * tw + px / patch;
                let sub = (py % patch) * patch + px % patch;
                let pixel = py * w + px;
                let class = buffers.semantic[pixel] as usize;
                if class >= classes {
                    return Err(invalid(format!("class {class} outside {classes}")));
                }
                sem.row_mut(token)[sub * classes + class] = 1.0;
                coord.row_mut(token)[sub * 3..sub * 3 + 3].copy_from_slice(&buffers.coordinate[pixel]);
            }
        }
        Ok((sem, coord))
    }
}

#[derive(Debug, Clone)]
pub struct ControlBranch {
    /// Embeds `[latent, anchor_mask]`.
    pub hint_proj: Linear,
    pub semantic_embed: Linear,
    pub coordinate_embed: Linear,
    pub before_proj: Linear,
    pub blocks: Vec<TransformerBlock>,
    /// Zero-initialized, one per block.
    pub after_proj: Vec<Linear>,
}

/// Widths of the control branch inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDims {
    pub dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    pub latent_channels: usize,
    pub semantic_width: usize,
    pub coordinate_width: usize,
}

impl ControlBranch {
    pub fn new(depth: usize, d: ControlDims, rng: &mut impl Rng) -> Self {
        Self {
            hint_proj: Linear::new(d.latent_channels + 1, d.dim, rng),
            semantic_embed: Linear::new(d.semantic_width, d.dim, rng),
            coordinate_embed: Linear::new(d.coordinate_width, d.dim, rng),
            before_proj: Linear::new(d.dim, d.dim, rng),
            blocks: (0..depth).map(|_| TransformerBlock::new(d.dim, d.heads, d.hidden, d.cond_dim, rng)).collect(),
            after_proj: (0..depth).map(|_| Linear::zeros(d.dim, d.dim)).collect(),
        }
    }

    /// Hint inputs summed token-wise into the branch's initial stream.
    pub fn embed(&self, hint: &HintInputs) -> Result<Tensor> {
        let n = hint.latents.rows();
        if hint.anchor_mask.len() != n || hint.semantic.rows() != n || hint.coordinate.rows() != n {
            return Err(invalid("hint inputs disagree on token count"));
        }
        let mask = Tensor::from_vec(&[n, 1], hint.anchor_mask.clone())?;
        let lat = Tensor::hstack(&[&hint.latents, &mask]);
        Ok(self
            .hint_proj
            .forward(&lat)
            .add(&self.semantic_embed.forward(&hint.semantic))
            .add(&self.coordinate_embed.forward(&hint.coordinate)))
    }

    /// One hint per control block.
    pub fn hints(
        &self,
        x: &Tensor,
        hint: &HintInputs,
        cond: &[f64],
        mask: Option<&AttentionMask>,
        positions: Option<&[[f64; 2]]>,
    ) -> Result<Vec<Tensor>> {
        let c0 = self.embed(hint)?;
        if c0.shape() != x.shape() {
            return Err(invalid(format!("hint stream {:?} vs tokens {:?}", c0.shape(), x.shape())));
        }
        let mut c = self.before_proj.forward(&c0).add(x);
        let mut out = Vec::with_capacity(self.blocks.len());
        for (b, proj) in self.blocks.iter().zip(&self.after_proj) {
            c = b.forward(&c, cond, mask, positions)?.0;
            out.push(proj.forward(&c));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ControlledBackbone {
    pub backbone: Backbone,
    pub control: ControlBranch,
    pub schedule: HintSchedule,
}

impl ControlledBackbone {
    pub fn new(backbone: Backbone, control: ControlBranch, scale: f64) -> Result<Self> {
        let schedule = HintSchedule::new(backbone.blocks.len(), control.blocks.len(), scale)?;
        Ok(Self { backbone, control, schedule })
    }

    /// Backbone output with hints injected; also returns the hints.
    pub fn forward(
        &self,
        x: &Tensor,
        hint: &HintInputs,
        cond: &[f64],
        mask: Option<&AttentionMask>,
        positions: Option<&[[f64; 2]]>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let s = &self.schedule;
        if s.backbone_depth != self.backbone.blocks.len() || s.control_depth != self.control.blocks.len() {
            return Err(invalid("schedule depths do not match the networks"));
        }
        let hints = self.control.hints(x, hint, cond, mask, positions)?;
        let mut y = x.clone();
        for (l, b) in self.backbone.blocks.iter().enumerate() {
            y = b.forward(&y, cond, mask, positions)?.0;
            if let Some(k) = s.slot(l) {
                y.add_scaled(&hints[k], s.scale);
            }
        }
        Ok((y, hints))
    }
}

impl Module for Backbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}

impl Module for ControlBranch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.hint_proj.visit(&join(prefix, "hint_proj"), f);
        self.semantic_embed.visit(&join(prefix, "semantic_embed"), f);
        self.coordinate_embed.visit(&join(prefix, "coordinate_embed"), f);
        self.before_proj.visit(&join(prefix, "before_proj"), f);
        for (i, (b, p)) in self.blocks.iter().zip(&self.after_proj).enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
            p.visit(&join(prefix, &format!("after_proj.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.hint_proj.visit_mut(&join(prefix, "hint_proj"), f);
        self.semantic_embed.visit_mut(&join(prefix, "semantic_embed"), f);
        self.coordinate_embed.visit_mut(&join(prefix, "coordinate_embed"), f);
        self.before_proj.visit_mut(&join(prefix, "before_proj"), f);
        for (i, (b, p)) in self.blocks.iter_mut().zip(&mut self.after_proj).enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
            p.visit_mut(&join(prefix, &format!("after_proj.{i}")), f);
        }
    }
}

impl Module for ControlledBackbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.control.visit(&join(prefix, "control"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.control.visit_mut(&join(prefix, "control"), f);
    }
}

/// Outcome of [`control_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub trials: usize,
    /// Largest `|controlled − plain|` with zero output projections.
    pub identity_max_err: f64,
    /// Largest deviation of `out(s=2) − out(s=1)` from the hint on a
    /// one-block probe.
    pub injection_probe_max_err: f64,
    /// Smallest `|controlled − plain|` with randomized output projections;
    /// positive means the branch is live.
    pub live_min_diff: f64,
    pub indices_40_8: Vec<usize>,
    pub passed: bool,
}

/// Random toy setup: every parameter redrawn so AdaLN-Zero gates are live,
/// then the control output projections zeroed again.
pub fn random_controlled(
    depths: (usize, usize),
    scale: f64,
    rng: &mut impl Rng,
) -> Result<(ControlledBackbone, ControlDims)> {
    let d = ControlDims { dim: 16, heads: 2, hidden: 32, cond_dim: 8, latent_channels: 4, semantic_width: 6, coordinate_width: 3 };
    let backbone = Backbone::new(depths.0, d.dim, d.heads, d.hidden, d.cond_dim, rng);
    let control = ControlBranch::new(depths.1, d, rng);
    let mut m = ControlledBackbone::new(backbone, control, scale)?;
    m.visit_mut("", &mut |_, p| p.value = Tensor::randn(p.value.shape(), 0.4, rng));
    for p in &mut m.control.after_proj {
        p.weight.value.fill(0.0);
        p.bias.value.fill(0.0);
    }
    Ok((m, d))
}

pub fn random_hint(d: &ControlDims, tokens: usize, rng: &mut impl Rng) -> HintInputs {
    HintInputs {
        latents: Tensor::randn(&[tokens, d.latent_channels], 1.0, rng),
        anchor_mask: (0..tokens).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        semantic: Tensor::randn(&[tokens, d.semantic_width], 1.0, rng),
        coordinate: Tensor::randn(&[tokens, d.coordinate_width], 1.0, rng),
    }
}

/// Zero-init identity over `trials` random inputs, the one-block injection
/// probe and the reference injection set for depths (40, 8).
pub fn control_check(seed: u64, trials: usize) -> Result<ControlReport> {
    let mut rng = stream(seed, "control-check");
    let tokens = 6;
    let (zero, d) = random_controlled((6, 2), 1.0, &mut rng)?;
    let mut live = zero.clone();
    for p in &mut live.control.after_proj {
        p.weight.value = Tensor::randn(p.weight.value.shape(), 0.4, &mut rng);
    }
    let mut identity: f64 = 0.0;
    let mut live_min = f64::INFINITY;
    for _ in 0..trials {
        let x = Tensor::randn(&[tokens, d.dim], 1.0, &mut rng);
        let cond: Vec<f64> = (0..d.cond_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hint = random_hint(&d, tokens, &mut rng);
        let plain = zero.backbone.forward(&x, &cond, None, None)?;
        identity = identity.max(zero.forward(&x, &hint, &cond, None, None)?.0.max_abs_diff(&plain));
        live_min = live_min.min(live.forward(&x, &hint, &cond, None, None)?.0.max_abs_diff(&plain));
    }

    // One backbone block, one control block: out(2) − out(1) = h₀.
    let (mut probe, _) = random_controlled((1, 1), 1.0, &mut rng)?;
    probe.control.after_proj[0].weight.value = Tensor::randn(&[d.dim, d.dim], 0.4, &mut rng);
    let x = Tensor::randn(&[tokens, d.dim], 1.0, &mut rng);
    let cond: Vec<f64> = (0..d.cond_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hint = random_hint(&d, tokens, &mut rng);
    let (y1, hints) = probe.forward(&x, &hint, &cond, None, None)?;
    probe.schedule.scale = 2.0;
    let (y2, _) = probe.forward(&x, &hint, &cond, None, None)?;
    let probe_err = y2.sub(&y1).max_abs_diff(&hints[0]);

    let indices_40_8 = injection_indices(40, 8)?;
    let passed = identity <= 1e-12
        && probe_err <= 1e-12
        && live_min > 0.0
        && indices_40_8 == [0, 5, 10, 15, 20, 25, 30, 35];
    Ok(ControlReport {
        trials,
        identity_max_err: identity,
        injection_probe_max_err: probe_err,
        live_min_diff: live_min,
        indices_40_8,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_examples() {
        assert_eq!(injection_indices(40, 8).unwrap(), [0, 5, 10, 15, 20, 25, 30, 35]);
        assert_eq!(injection_indices(8, 8).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(injection_indices(24, 8).unwrap(), [0, 3, 6, 9, 12, 15, 18, 21]);
        assert!(injection_indices(4, 5).is_err());
        assert!(injection_indices(4, 0).is_err());
    }

    #[test]
    fn buffer_tokens_patchify() {
        let b = GeometryBuffers {
            width: 4,
            height: 2,
            semantic: vec![0, 1, 2, 0, 1, 1, 2, 2],
            coordinate: (0..8).map(|i| [i as f64, 0.0, -1.0]).collect(),
            plucker: vec![[0.0; 6]; 8],
            hit_mask: vec![true; 8],
            depth: vec![1.0; 8],
        };
        let (sem, coord) = HintInputs::buffer_tokens(&b, 3, 2).unwrap();
        assert_eq!(sem.shape(), &[2, 12]);
        // Token 1 covers pixels (2,0), (3,0), (2,1), (3,1).
        assert_eq!(sem.row(1), &[0., 0., 1., 1., 0., 0., 0., 0., 1., 0., 0., 1.]);
        assert_eq!(&coord.row(1)[..3], &[2.0, 0.0, -1.0]);
        assert_eq!(&coord.row(1)[9..], &[7.0, 0.0, -1.0]);
        assert!(HintInputs::buffer_tokens(&b, 3, 3).is_err());
        assert!(HintInputs::buffer_tokens(&b, 2, 2).is_err());
    }
}
