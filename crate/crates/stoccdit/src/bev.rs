//! BEV layout encoder: per-cell sums of channel embeddings (or a learned
//! empty embedding), average-pooled to the token grid and projected to the
//! model width.

use nn_core::param::join;
use nn_core::tensor::{matmul, matmul_tn};
use nn_core::{Linear, Module, Param, Tensor};
use occ_core::BevLayout;
use rand::Rng;

use crate::error::{Result, StError};

/// `[S, channels + 1]` pooling weights: entry `(token, c)` is the fraction of
/// the token's cells with bit `c` set; the last column is the fraction of
/// empty cells. Tokens are x-major over the `(W/patch) × (H/patch)` grid.
pub fn pool_weights(layout: &BevLayout, channels: usize, patch: usize) -> Result<Tensor> {
    let (w, h) = (layout.spec.width, layout.spec.height);
    if patch == 0 || w % patch != 0 || h % patch != 0 {
        return Err(StError::Shape(format!("patch {patch} does not tile a {w}×{h} layout")));
    }
    if layout.spec.channels != channels {
        return Err(StError::Shape(format!("layout has {} channels, encoder {channels}", layout.spec.channels)));
    }
    let (tw, th) = (w / patch, h / patch);
    let area = (patch * patch) as f64;
    let mut out = Tensor::zeros(&[tw * th, channels + 1]);
    for x in 0..w {
        for y in 0..h {
            let bits = layout.get(x, y);
            let row = out.row_mut((x / patch) * th + y / patch);
            if bits == 0 {
                row[channels] += 1.0 / area;
            }
            for (c, r) in row.iter_mut().enumerate().take(channels) {
                if bits >> c & 1 == 1 {
                    *r += 1.0 / area;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BevEncoder {
    /// `[channels, E]`.
    pub channel_embed: Param,
    /// `[1, E]`.
    pub empty_embed: Param,
    pub proj: Linear,
    pub patch: usize,
}

#[derive(Debug, Clone)]
pub struct BevCache {
    weights: Tensor,
    pooled: Tensor,
}

impl BevEncoder {
    pub fn new(channels: usize, embed: usize, dim: usize, patch: usize, rng: &mut impl Rng) -> Self {
        Self {
            channel_embed: Param::new(Tensor::randn(&[channels, embed], 1.0, rng)),
            empty_embed: Param::new(Tensor::randn(&[1, embed], 1.0, rng)),
            proj: Linear::new(embed, dim, rng),
            patch,
        }
    }

    pub fn channels(&self) -> usize {
        self.channel_embed.value.rows()
    }

    fn table(&self) -> Tensor {
        Tensor::vstack(&[&self.channel_embed.value, &self.empty_embed.value])
    }

    /// Pooled cell features `[S, E]` before projection.
    pub fn pooled(&self, layout: &BevLayout) -> Result<Tensor> {
        Ok(matmul(&pool_weights(layout, self.channels(), self.patch)?, &self.table()))
    }

    /// Token grid `[S, D]`.
    pub fn forward(&self, layout: &BevLayout) -> Result<(Tensor, BevCache)> {
        let weights = pool_weights(layout, self.channels(), self.patch)?;
        let pooled = matmul(&weights, &self.table());
        Ok((self.proj.forward(&pooled), BevCache { weights, pooled }))
    }

    pub fn backward(&mut self, cache: &BevCache, dtokens: &Tensor) {
        let dpooled = self.proj.backward(&cache.pooled, dtokens);
        let dtable = matmul_tn(&cache.weights, &dpooled);
        let c = self.channels();
        self.channel_embed.grad.add_assign(&dtable.slice_rows(0, c));
        self.empty_embed.grad.add_assign(&dtable.slice_rows(c, c + 1));
    }
}

impl Module for BevEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "channel_embed"), &self.channel_embed);
        f(&join(prefix, "empty_embed"), &self.empty_embed);
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "channel_embed"), &mut self.channel_embed);
        f(&join(prefix, "empty_embed"), &mut self.empty_embed);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}
