use rand::Rng;

use crate::adaln::{adaln_zero_backward, pre_modulate, AdaLnModulation};
use crate::attention::{AttentionMask, MhaCache, MultiHeadAttention};
use crate::error::Result;
use crate::ffn::{SwiGlu, SwiGluCache};
use crate::ops::{gate, LayerNormCache};
use crate::param::{join, Module, Param};
use crate::tensor::Tensor;

/// Pre-norm transformer block: masked self-attention and SwiGLU, each wrapped
/// in an AdaLN-Zero gated residual driven by a conditioning vector.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attn: MultiHeadAttention,
    pub ffn: SwiGlu,
    pub modulation: AdaLnModulation,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    cond: Vec<f64>,
    modv: Vec<f64>,
    ln1: LayerNormCache,
    attn_out: Tensor,
    attn: MhaCache,
    ln2: LayerNormCache,
    ffn_out: Tensor,
    ffn: SwiGluCache,
}

impl TransformerBlock {
    pub fn new(dim: usize, heads: usize, hidden: usize, cond_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            attn: MultiHeadAttention::new(dim, heads, rng),
            ffn: SwiGlu::new(dim, hidden, rng),
            modulation: AdaLnModulation::new(cond_dim, dim, 6),
        }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        cond: &[f64],
        mask: Option<&AttentionMask>,
        positions: Option<&[[f64; 2]]>,
    ) -> Result<(Tensor, BlockCache)> {
        let modv = self.modulation.forward(cond);
        let m = |i| self.modulation.chunk(&modv, i);
        let (h1, ln1) = pre_modulate(x, m(0), m(1));
        let (attn_out, attn) = self.attn.forward(&h1, mask, positions)?;
        let x1 = x.add(&gate(&attn_out, m(2)));
        let (h2, ln2) = pre_modulate(&x1, m(3), m(4));
        let (ffn_out, ffn) = self.ffn.forward(&h2);
        let y = x1.add(&gate(&ffn_out, m(5)));
        let cache = BlockCache { cond: cond.to_vec(), modv: modv.clone(), ln1, attn_out, attn, ln2, ffn_out, ffn };
        Ok((y, cache))
    }

    /// Accumulates parameter gradients and returns `(dx, dcond)`.
    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> (Tensor, Vec<f64>) {
        let dim = self.modulation.dim;
        let modv = &cache.modv;
        let chunk = |i: usize| &modv[i * dim..(i + 1) * dim];
        let mut dmod = vec![0.0; 6 * dim];
        let ffn = &mut self.ffn;
        let (dx1, dshift, dscale, dgate) =
            adaln_zero_backward(&cache.ln2, &cache.ffn_out, chunk(4), chunk(5), dy, |d| ffn.backward(&cache.ffn, d));
        dmod[3 * dim..4 * dim].copy_from_slice(&dshift);
        dmod[4 * dim..5 * dim].copy_from_slice(&dscale);
        dmod[5 * dim..6 * dim].copy_from_slice(&dgate);
        let attn = &mut self.attn;
        let (dx, dshift, dscale, dgate) =
            adaln_zero_backward(&cache.ln1, &cache.attn_out, chunk(1), chunk(2), &dx1, |d| attn.backward(&cache.attn, d));
        dmod[..dim].copy_from_slice(&dshift);
        dmod[dim..2 * dim].copy_from_slice(&dscale);
        dmod[2 * dim..3 * dim].copy_from_slice(&dgate);
        let dcond = self.modulation.backward(&cache.cond, &dmod);
        (dx, dcond)
    }
}

impl Module for TransformerBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.attn.visit(&join(prefix, "attn"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
        self.modulation.visit(&join(prefix, "ada"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
        self.modulation.visit_mut(&join(prefix, "ada"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_init() {
        let mut rng = crate::rng::stream(0, "block");
        let b = TransformerBlock::new(8, 2, 16, 4, &mut rng);
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let (y, _) = b.forward(&x, &[0.1, 0.2, -0.3, 1.0], None, None).unwrap();
        assert_eq!(y, x);
    }
}
