//! Spatio-temporal occupancy diffusion transformer.
//!
//! The model consumes a set of token streams, each tagged with a frame and a
//! kind (clean history or noisy current). Every stream is the concatenation
//! `[bev_tokens_f ‖ latent_tokens]` of its frame's layout tokens and its
//! projected latent. Each block runs
//!
//! 1. spatial self-attention within each stream (shared weights, per-stream
//!    AdaLN-Zero conditioning on `τ` and the frame index; clean streams use
//!    `τ = 0`),
//! 2. temporal attention across streams at each latent token position under
//!    the causal stream mask, added through a scalar gate initialized at zero,
//! 3. a shared SwiGLU feed-forward with AdaLN-Zero.
//!
//! Only the latent tokens of noisy streams go through the output head.

use std::path::Path;

use nn_core::adaln::{adaln_zero_backward, pre_modulate, pre_modulate_backward};
use nn_core::attention::{AttentionCache, MhaCache};
use nn_core::checkpoint::{find, load_module, load_pkpt, module_tensors, save_pkpt};
use nn_core::ffn::SwiGluCache;
use nn_core::ops::{gate, LayerNormCache};
use nn_core::param::join;
use nn_core::rope::grid_positions;
use nn_core::timestep::TimestepCache;
use nn_core::{
    masked_attention, masked_attention_backward, AdaLnModulation, AttentionMask, Linear, Module, MultiHeadAttention,
    Param, SwiGlu, Tensor, TimestepEmbedder,
};
use occ_core::BevLayout;
use rand::Rng;

use crate::bev::{BevCache, BevEncoder};
use crate::config::DitConfig;
use crate::error::{Result, StError};
use crate::mask::{stream_mask, StreamKind, StreamTag};
use crate::vae::{json_from_tensor, json_tensor};

/// Modulation chunks per block: spatial (shift, scale, gate), temporal
/// (shift, scale), feed-forward (shift, scale, gate).
const BLOCK_CHUNKS: usize = 8;

#[derive(Debug, Clone)]
pub struct DitBlock {
    pub attn: MultiHeadAttention,
    pub temporal: MultiHeadAttention,
    pub ffn: SwiGlu,
    pub modulation: AdaLnModulation,
    /// Scalar gate on the temporal sub-layer, zero at init.
    pub temporal_gate: Param,
}

#[derive(Debug, Clone)]
struct StreamBlockCache {
    modv: Vec<f64>,
    ln1: LayerNormCache,
    attn_out: Tensor,
    attn: MhaCache,
    lnt: Option<LayerNormCache>,
    ln2: LayerNormCache,
    ffn_out: Tensor,
    ffn: SwiGluCache,
}

#[derive(Debug, Clone)]
struct TemporalCache {
    h: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    ctx: Tensor,
    attn: Vec<AttentionCache>,
    out: Tensor,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    streams: Vec<StreamBlockCache>,
    temporal: Option<TemporalCache>,
    tokens: usize,
}

impl DitBlock {
    pub fn new(dim: usize, heads: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            attn: MultiHeadAttention::new(dim, heads, rng),
            temporal: MultiHeadAttention::new(dim, heads, rng),
            ffn: SwiGlu::new(dim, hidden, rng),
            modulation: AdaLnModulation::new(dim, dim, BLOCK_CHUNKS),
            temporal_gate: Param::zeros(&[1]),
        }
    }

    /// `xs[i]` is stream `i` as `[2S, D]` (layout tokens first). Temporal
    /// attention runs over rows `S..2S` when `temporal_mask` is given.
    pub fn forward(
        &self,
        xs: &[Tensor],
        conds: &[Vec<f64>],
        temporal_mask: Option<&AttentionMask>,
        positions: &[[f64; 2]],
        tokens: usize,
    ) -> Result<(Vec<Tensor>, BlockCache)> {
        let d = self.modulation.dim;
        let n = xs.len();
        let mut caches = Vec::with_capacity(n);
        let mut x1s = Vec::with_capacity(n);
        let mut modvs = Vec::with_capacity(n);
        for (x, cond) in xs.iter().zip(conds) {
            let modv = self.modulation.forward(cond);
            let m = |k: usize| &modv[k * d..(k + 1) * d];
            let (h1, ln1) = pre_modulate(x, m(0), m(1));
            let (attn_out, attn) = self.attn.forward(&h1, None, Some(positions))?;
            x1s.push(x.add(&gate(&attn_out, m(2))));
            caches.push((ln1, attn_out, attn));
            modvs.push(modv);
        }

        let mut lnts: Vec<Option<LayerNormCache>> = vec![None; n];
        let mut temporal = None;
        if let Some(mask) = temporal_mask {
            // Position-major stacking: row `p * n + i` is token `p` of stream `i`.
            let mut h = Tensor::zeros(&[tokens * n, d]);
            for (i, (x1, modv)) in x1s.iter().zip(&modvs).enumerate() {
                let (ht, lnt) = pre_modulate(&x1.slice_rows(tokens, 2 * tokens), &modv[3 * d..4 * d], &modv[4 * d..5 * d]);
                for p in 0..tokens {
                    h.row_mut(p * n + i).copy_from_slice(ht.row(p));
                }
                lnts[i] = Some(lnt);
            }
            let t = &self.temporal;
            let (q, k, v) = (t.wq.forward(&h), t.wk.forward(&h), t.wv.forward(&h));
            let mut ctx = Tensor::zeros(&[tokens * n, d]);
            let mut attn = Vec::with_capacity(tokens);
            for p in 0..tokens {
                let (lo, hi) = (p * n, (p + 1) * n);
                let (c, ac) =
                    masked_attention(&q.slice_rows(lo, hi), &k.slice_rows(lo, hi), &v.slice_rows(lo, hi), Some(mask), t.heads)?;
                ctx.data_mut()[lo * d..hi * d].copy_from_slice(c.data());
                attn.push(ac);
            }
            let out = t.wo.forward(&ctx);
            let g = self.temporal_gate.value.data()[0];
            for (i, x1) in x1s.iter_mut().enumerate() {
                for p in 0..tokens {
                    for (a, &b) in x1.row_mut(tokens + p).iter_mut().zip(out.row(p * n + i)) {
                        *a += g * b;
                    }
                }
            }
            temporal = Some(TemporalCache { h, q, k, v, ctx, attn, out });
        }

        let mut ys = Vec::with_capacity(n);
        let mut streams = Vec::with_capacity(n);
        for (((x2, modv), (ln1, attn_out, attn)), lnt) in x1s.into_iter().zip(modvs).zip(caches).zip(lnts) {
            let m = |k: usize| &modv[k * d..(k + 1) * d];
            let (h2, ln2) = pre_modulate(&x2, m(5), m(6));
            let (ffn_out, ffn) = self.ffn.forward(&h2);
            ys.push(x2.add(&gate(&ffn_out, m(7))));
            streams.push(StreamBlockCache { modv, ln1, attn_out, attn, lnt, ln2, ffn_out, ffn });
        }
        Ok((ys, BlockCache { streams, temporal, tokens }))
    }

    /// Accumulates parameter gradients; returns `(dxs, dconds)`.
    pub fn backward(&mut self, cache: &BlockCache, conds: &[Vec<f64>], dys: &[Tensor]) -> (Vec<Tensor>, Vec<Vec<f64>>) {
        let d = self.modulation.dim;
        let n = dys.len();
        let tokens = cache.tokens;
        let mut dmods = vec![vec![0.0; BLOCK_CHUNKS * d]; n];
        let mut dx2s = Vec::with_capacity(n);
        for ((c, dy), dmod) in cache.streams.iter().zip(dys).zip(dmods.iter_mut()) {
            let m = |k: usize| &c.modv[k * d..(k + 1) * d];
            let ffn = &mut self.ffn;
            let (dx2, dshift, dscale, dgate) =
                adaln_zero_backward(&c.ln2, &c.ffn_out, m(6), m(7), dy, |g| ffn.backward(&c.ffn, g));
            dmod[5 * d..6 * d].copy_from_slice(&dshift);
            dmod[6 * d..7 * d].copy_from_slice(&dscale);
            dmod[7 * d..8 * d].copy_from_slice(&dgate);
            dx2s.push(dx2);
        }

        let mut dx1s = dx2s.clone();
        if let Some(tc) = &cache.temporal {
            let g = self.temporal_gate.value.data()[0];
            let mut dout = Tensor::zeros(&[tokens * n, d]);
            let mut dg = 0.0;
            for (i, dx2) in dx2s.iter().enumerate() {
                for p in 0..tokens {
                    let up = dx2.row(tokens + p);
                    dg += up.iter().zip(tc.out.row(p * n + i)).map(|(a, b)| a * b).sum::<f64>();
                    for (o, &u) in dout.row_mut(p * n + i).iter_mut().zip(up) {
                        *o = g * u;
                    }
                }
            }
            self.temporal_gate.grad.data_mut()[0] += dg;
            let t = &mut self.temporal;
            let dctx = t.wo.backward(&tc.ctx, &dout);
            let mut dq = Tensor::zeros(&[tokens * n, d]);
            let mut dk = Tensor::zeros(&[tokens * n, d]);
            let mut dv = Tensor::zeros(&[tokens * n, d]);
            for (p, ac) in tc.attn.iter().enumerate() {
                let (lo, hi) = (p * n, (p + 1) * n);
                let (a, b, c) = masked_attention_backward(
                    &tc.q.slice_rows(lo, hi),
                    &tc.k.slice_rows(lo, hi),
                    &tc.v.slice_rows(lo, hi),
                    ac,
                    &dctx.slice_rows(lo, hi),
                );
                dq.data_mut()[lo * d..hi * d].copy_from_slice(a.data());
                dk.data_mut()[lo * d..hi * d].copy_from_slice(b.data());
                dv.data_mut()[lo * d..hi * d].copy_from_slice(c.data());
            }
            let mut dh = t.wq.backward(&tc.h, &dq);
            dh.add_assign(&t.wk.backward(&tc.h, &dk));
            dh.add_assign(&t.wv.backward(&tc.h, &dv));
            for (i, (c, dx1)) in cache.streams.iter().zip(dx1s.iter_mut()).enumerate() {
                let mut dht = Tensor::zeros(&[tokens, d]);
                for p in 0..tokens {
                    dht.row_mut(p).copy_from_slice(dh.row(p * n + i));
                }
                let lnt = c.lnt.as_ref().expect("temporal cache per stream");
                let (dxt, dshift, dscale) = pre_modulate_backward(lnt, &c.modv[4 * d..5 * d], &dht);
                for p in 0..tokens {
                    for (a, &b) in dx1.row_mut(tokens + p).iter_mut().zip(dxt.row(p)) {
                        *a += b;
                    }
                }
                dmods[i][3 * d..4 * d].copy_from_slice(&dshift);
                dmods[i][4 * d..5 * d].copy_from_slice(&dscale);
            }
        }

        let mut dxs = Vec::with_capacity(n);
        let mut dconds = Vec::with_capacity(n);
        for (((c, dx1), dmod), cond) in cache.streams.iter().zip(&dx1s).zip(dmods.iter_mut()).zip(conds) {
            let m = |k: usize| &c.modv[k * d..(k + 1) * d];
            let attn = &mut self.attn;
            let (dx, dshift, dscale, dgate) =
                adaln_zero_backward(&c.ln1, &c.attn_out, m(1), m(2), dx1, |g| attn.backward(&c.attn, g));
            dmod[..d].copy_from_slice(&dshift);
            dmod[d..2 * d].copy_from_slice(&dscale);
            dmod[2 * d..3 * d].copy_from_slice(&dgate);
            dconds.push(self.modulation.backward(cond, dmod));
            dxs.push(dx);
        }
        (dxs, dconds)
    }
}

impl Module for DitBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.attn.visit(&join(prefix, "attn"), f);
        self.temporal.visit(&join(prefix, "temporal"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
        self.modulation.visit(&join(prefix, "ada"), f);
        f(&join(prefix, "temporal_gate"), &self.temporal_gate);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.temporal.visit_mut(&join(prefix, "temporal"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
        self.modulation.visit_mut(&join(prefix, "ada"), f);
        f(&join(prefix, "temporal_gate"), &mut self.temporal_gate);
    }
}

/// True for parameters of the temporal sub-layers.
pub fn is_temporal_param(name: &str) -> bool {
    name.contains(".temporal.") || name.ends_with(".temporal_gate")
}

/// One token stream of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInput {
    pub tag: StreamTag,
    /// `[S, C_z]` latent tokens.
    pub latent: Tensor,
    pub tau: f64,
}

impl StreamInput {
    pub fn clean(frame: usize, latent: Tensor) -> Self {
        Self { tag: StreamTag::clean(frame), latent, tau: 0.0 }
    }

    pub fn noisy(frame: usize, latent: Tensor, tau: f64) -> Self {
        Self { tag: StreamTag::noisy(frame), latent, tau }
    }
}

#[derive(Debug, Clone)]
pub struct DitInput<'a> {
    pub streams: Vec<StreamInput>,
    /// Layout per frame; `None` selects the learned null condition.
    pub layouts: Vec<Option<&'a BevLayout>>,
    /// Runs the temporal sub-layers; when false they are skipped entirely.
    pub temporal: bool,
}

#[derive(Debug, Clone)]
struct HeadCache {
    stream: usize,
    modv: Vec<f64>,
    ln: LayerNormCache,
    h: Tensor,
}

#[derive(Debug, Clone)]
pub struct DitCache {
    frames: Vec<Option<Option<BevCache>>>,
    frame_of: Vec<usize>,
    latents: Vec<Tensor>,
    time: Vec<TimestepCache>,
    conds: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    heads: Vec<HeadCache>,
}

#[derive(Debug, Clone)]
pub struct StOccDit {
    pub config: DitConfig,
    pub bev: BevEncoder,
    /// `[S, D]` tokens replacing the layout tokens for unconditional passes.
    pub null_tokens: Param,
    pub latent_proj: Linear,
    pub time_embed: TimestepEmbedder,
    /// `[T, D]`.
    pub frame_embed: Param,
    pub blocks: Vec<DitBlock>,
    pub final_mod: AdaLnModulation,
    pub final_proj: Linear,
}

impl StOccDit {
    pub fn new(config: DitConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, s) = (config.hidden, config.tokens());
        let blocks = (0..config.depth).map(|_| DitBlock::new(d, config.heads, d * config.ffn_mult, rng)).collect();
        Ok(Self {
            bev: BevEncoder::new(config.layout_channels, config.bev_embed_dim, d, config.layout_patch, rng),
            null_tokens: Param::new(Tensor::randn(&[s, d], 0.5, rng)),
            latent_proj: Linear::new(config.latent_channels, d, rng),
            time_embed: TimestepEmbedder::new(config.freq_dim, d, rng),
            frame_embed: Param::new(Tensor::randn(&[config.frames_per_clip, d], 0.5, rng)),
            blocks,
            final_mod: AdaLnModulation::new(d, d, 2),
            final_proj: Linear::zeros(d, config.latent_channels),
            config,
        })
    }

    fn check(&self, input: &DitInput) -> Result<()> {
        let (s, c) = (self.config.tokens(), self.config.latent_channels);
        for (i, st) in input.streams.iter().enumerate() {
            if st.latent.rows() != s || st.latent.cols() != c {
                return Err(StError::Shape(format!("stream {i} latent {:?}, expected [{s}, {c}]", st.latent.shape())));
            }
            if st.tag.frame >= input.layouts.len() || st.tag.frame >= self.config.frames_per_clip {
                return Err(StError::Shape(format!(
                    "stream {i} frame {} with {} layouts and {} frame embeddings",
                    st.tag.frame,
                    input.layouts.len(),
                    self.config.frames_per_clip
                )));
            }
            if input.streams[..i].iter().any(|o| o.tag == st.tag) {
                return Err(StError::Shape(format!("duplicate stream {:?}", st.tag)));
            }
        }
        Ok(())
    }

    /// Velocity predictions `[S, C_z]` for the noisy streams, in input order.
    pub fn forward(&self, input: &DitInput) -> Result<(Vec<Tensor>, DitCache)> {
        self.check(input)?;
        let s = self.config.tokens();
        let d = self.config.hidden;

        let mut frames: Vec<Option<Option<BevCache>>> = vec![None; input.layouts.len()];
        let mut frame_tokens: Vec<Option<Tensor>> = vec![None; input.layouts.len()];
        for st in &input.streams {
            let f = st.tag.frame;
            if frame_tokens[f].is_some() {
                continue;
            }
            match input.layouts[f] {
                Some(layout) => {
                    let (t, c) = self.bev.forward(layout)?;
                    frame_tokens[f] = Some(t);
                    frames[f] = Some(Some(c));
                }
                None => {
                    frame_tokens[f] = Some(self.null_tokens.value.clone());
                    frames[f] = Some(None);
                }
            }
        }

        let mut xs = Vec::with_capacity(input.streams.len());
        let mut conds = Vec::with_capacity(input.streams.len());
        let mut time = Vec::with_capacity(input.streams.len());
        for st in &input.streams {
            let (mut cond, tc) = self.time_embed.forward(st.tau);
            for (c, &e) in cond.iter_mut().zip(self.frame_embed.value.row(st.tag.frame)) {
                *c += e;
            }
            let bev = frame_tokens[st.tag.frame].as_ref().expect("filled above");
            xs.push(Tensor::vstack(&[bev, &self.latent_proj.forward(&st.latent)]));
            conds.push(cond);
            time.push(tc);
        }

        let mut positions = grid_positions(self.config.token_side);
        positions.extend_from_within(..);
        let tags: Vec<StreamTag> = input.streams.iter().map(|st| st.tag).collect();
        let mask = input.temporal.then(|| stream_mask(&tags, self.config.noisy_sees_current_clean));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (ys, bc) = block.forward(&xs, &conds, mask.as_ref(), &positions, s)?;
            xs = ys;
            blocks.push(bc);
        }

        let mut outputs = Vec::new();
        let mut heads = Vec::new();
        for (i, st) in input.streams.iter().enumerate() {
            if st.tag.kind != StreamKind::Noisy {
                continue;
            }
            let modv = self.final_mod.forward(&conds[i]);
            let (h, ln) = pre_modulate(&xs[i].slice_rows(s, 2 * s), &modv[..d], &modv[d..]);
            outputs.push(self.final_proj.forward(&h));
            heads.push(HeadCache { stream: i, modv, ln, h });
        }
        let cache = DitCache {
            frames,
            frame_of: input.streams.iter().map(|st| st.tag.frame).collect(),
            latents: input.streams.iter().map(|st| st.latent.clone()).collect(),
            time,
            conds,
            blocks,
            heads,
        };
        Ok((outputs, cache))
    }

    /// Accumulates parameter gradients given `dL/dv` for each noisy output.
    pub fn backward(&mut self, cache: &DitCache, dvel: &[Tensor]) {
        assert_eq!(dvel.len(), cache.heads.len(), "one gradient per noisy stream");
        let s = self.config.tokens();
        let d = self.config.hidden;
        let n = cache.conds.len();
        let mut dxs: Vec<Tensor> = (0..n).map(|_| Tensor::zeros(&[2 * s, d])).collect();
        let mut dconds = vec![vec![0.0; d]; n];
        for (hc, dv) in cache.heads.iter().zip(dvel) {
            let dh = self.final_proj.backward(&hc.h, dv);
            let (dx, dshift, dscale) = pre_modulate_backward(&hc.ln, &hc.modv[d..], &dh);
            let dmod: Vec<f64> = dshift.into_iter().chain(dscale).collect();
            let dc = self.final_mod.backward(&cache.conds[hc.stream], &dmod);
            for (a, b) in dconds[hc.stream].iter_mut().zip(dc) {
                *a += b;
            }
            dxs[hc.stream].data_mut()[s * d..].copy_from_slice(dx.data());
        }
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let (dx, dc) = block.backward(bc, &cache.conds, &dxs);
            dxs = dx;
            for (acc, g) in dconds.iter_mut().zip(dc) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let mut dbev: Vec<Option<Tensor>> = vec![None; cache.frames.len()];
        for i in 0..n {
            let f = cache.frame_of[i];
            self.latent_proj.backward_params(&cache.latents[i], &dxs[i].slice_rows(s, 2 * s));
            let db = dxs[i].slice_rows(0, s);
            match &mut dbev[f] {
                Some(acc) => acc.add_assign(&db),
                slot => *slot = Some(db),
            }
            self.time_embed.backward(&cache.time[i], &dconds[i]);
            for (g, &v) in self.frame_embed.grad.row_mut(f).iter_mut().zip(&dconds[i]) {
                *g += v;
            }
        }
        for (f, db) in dbev.into_iter().enumerate() {
            let Some(db) = db else { continue };
            match &cache.frames[f] {
                Some(Some(bc)) => self.bev.backward(bc, &db),
                Some(None) => self.null_tokens.grad.add_assign(&db),
                None => unreachable!("frame {f} has streams but no layout tokens"),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = module_tensors(self, "dit");
        tensors.push(("config".into(), json_tensor(&self.config)?));
        save_pkpt(path, &tensors)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tensors = load_pkpt(path)?;
        let config: DitConfig = json_from_tensor(find(&tensors, "config"))?;
        let mut rng = nn_core::rng::stream(0, "dit-load");
        let mut dit = Self::new(config, &mut rng)?;
        load_module(&mut dit, "dit", &tensors)?;
        Ok(dit)
    }
}

impl Module for StOccDit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.bev.visit(&join(prefix, "bev"), f);
        f(&join(prefix, "null_tokens"), &self.null_tokens);
        self.latent_proj.visit(&join(prefix, "latent_proj"), f);
        self.time_embed.visit(&join(prefix, "time_embed"), f);
        f(&join(prefix, "frame_embed"), &self.frame_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.final_mod.visit(&join(prefix, "final_mod"), f);
        self.final_proj.visit(&join(prefix, "final_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.bev.visit_mut(&join(prefix, "bev"), f);
        f(&join(prefix, "null_tokens"), &mut self.null_tokens);
        self.latent_proj.visit_mut(&join(prefix, "latent_proj"), f);
        self.time_embed.visit_mut(&join(prefix, "time_embed"), f);
        f(&join(prefix, "frame_embed"), &mut self.frame_embed);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.final_mod.visit_mut(&join(prefix, "final_mod"), f);
        self.final_proj.visit_mut(&join(prefix, "final_proj"), f);
    }
}
