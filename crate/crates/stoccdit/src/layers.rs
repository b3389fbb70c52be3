//! Spatial rearrangements and residual sub-layers used by the VAE.
//!
//! Feature maps are `[w·h, c]` tensors with cells ordered x-major
//! (`x * h + y`), like layouts and grid columns.

use nn_core::attention::MhaCache;
use nn_core::ops::{layer_norm, layer_norm_backward, silu, silu_grad, LayerNormCache};
use nn_core::param::join;
use nn_core::{AttentionMask, Linear, Module, MultiHeadAttention, Param, Tensor};
use rand::Rng;

/// `[w·h, c]` → `[(w/f)·(h/f), f·f·c]`. Within a block, sub-cells are
/// ordered `(dx, dy)` x-major.
pub fn space_to_depth(x: &Tensor, w: usize, h: usize, f: usize) -> Tensor {
    let c = x.cols();
    debug_assert_eq!(x.rows(), w * h);
    let (bw, bh, oc) = (w / f, h / f, f * f * c);
    let mut out = vec![0.0; x.len()];
    for bx in 0..bw {
        for by in 0..bh {
            for dx in 0..f {
                for dy in 0..f {
                    let src = ((bx * f + dx) * h + by * f + dy) * c;
                    let dst = (bx * bh + by) * oc + (dx * f + dy) * c;
                    out[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
                }
            }
        }
    }
    Tensor::from_vec(&[bw * bh, oc], out).expect("permutation keeps size")
}

/// Inverse of [`space_to_depth`]; `w`, `h` are the output dimensions.
pub fn depth_to_space(x: &Tensor, w: usize, h: usize, f: usize) -> Tensor {
    let c = x.cols() / (f * f);
    let (bw, bh, ic) = (w / f, h / f, x.cols());
    debug_assert_eq!(x.rows(), bw * bh);
    let mut out = vec![0.0; x.len()];
    for bx in 0..bw {
        for by in 0..bh {
            for dx in 0..f {
                for dy in 0..f {
                    let dst = ((bx * f + dx) * h + by * f + dy) * c;
                    let src = (bx * bh + by) * ic + (dx * f + dy) * c;
                    out[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
                }
            }
        }
    }
    Tensor::from_vec(&[w * h, c], out).expect("permutation keeps size")
}

/// `x + fc2(silu(fc1(norm(x))))`.
#[derive(Debug, Clone)]
pub struct ResMlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct ResMlpCache {
    ln: LayerNormCache,
    pre: Tensor,
    act: Tensor,
}

impl ResMlp {
    pub fn new(dim: usize, mult: usize, rng: &mut impl Rng) -> Self {
        let hidden = dim * mult;
        Self { fc1: Linear::new(dim, hidden, rng), fc2: Linear::with_std(hidden, dim, 0.5 / (hidden as f64).sqrt(), rng) }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ResMlpCache) {
        let (xhat, ln) = layer_norm(x);
        let pre = self.fc1.forward(&xhat);
        let act = pre.map(silu);
        let y = x.add(&self.fc2.forward(&act));
        (y, ResMlpCache { ln, pre, act })
    }

    pub fn backward(&mut self, cache: &ResMlpCache, dy: &Tensor) -> Tensor {
        let dact = self.fc2.backward(&cache.act, dy);
        let mut dpre = dact;
        for (d, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
            *d *= silu_grad(p);
        }
        let dxhat = self.fc1.backward(&cache.ln.xhat, &dpre);
        layer_norm_backward(&cache.ln, &dxhat).add(dy)
    }
}

impl Module for ResMlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Positions `(x, y)` of an x-major `w × h` cell map.
pub fn map_positions(w: usize, h: usize) -> Vec<[f64; 2]> {
    (0..w * h).map(|i| [(i / h) as f64, (i % h) as f64]).collect()
}

/// Row attention (cells sharing `y`) followed by column attention (cells
/// sharing `x`), each a pre-norm residual with 2D RoPE.
#[derive(Debug, Clone)]
pub struct AxialAttention {
    pub along_x: MultiHeadAttention,
    pub along_y: MultiHeadAttention,
    masks: [AttentionMask; 2],
    positions: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct AxialCache {
    ln: [LayerNormCache; 2],
    attn: [MhaCache; 2],
}

impl AxialAttention {
    pub fn new(dim: usize, heads: usize, w: usize, h: usize, rng: &mut impl Rng) -> Self {
        let n = w * h;
        let same_y = AttentionMask::from_fn(n, n, |i, j| i % h == j % h).expect("diagonal allowed");
        let same_x = AttentionMask::from_fn(n, n, |i, j| i / h == j / h).expect("diagonal allowed");
        let mut along_x = MultiHeadAttention::new(dim, heads, rng);
        let mut along_y = MultiHeadAttention::new(dim, heads, rng);
        for a in [&mut along_x, &mut along_y] {
            a.wo.weight.value = a.wo.weight.value.scale(0.5);
        }
        Self { along_x, along_y, masks: [same_y, same_x], positions: map_positions(w, h) }
    }

    pub fn forward(&self, x: &Tensor) -> nn_core::Result<(Tensor, AxialCache)> {
        let (h0, ln0) = layer_norm(x);
        let (a0, c0) = self.along_x.forward(&h0, Some(&self.masks[0]), Some(&self.positions))?;
        let x1 = x.add(&a0);
        let (h1, ln1) = layer_norm(&x1);
        let (a1, c1) = self.along_y.forward(&h1, Some(&self.masks[1]), Some(&self.positions))?;
        Ok((x1.add(&a1), AxialCache { ln: [ln0, ln1], attn: [c0, c1] }))
    }

    pub fn backward(&mut self, cache: &AxialCache, dy: &Tensor) -> Tensor {
        let dh1 = self.along_y.backward(&cache.attn[1], dy);
        let dx1 = layer_norm_backward(&cache.ln[1], &dh1).add(dy);
        let dh0 = self.along_x.backward(&cache.attn[0], &dx1);
        layer_norm_backward(&cache.ln[0], &dh0).add(&dx1)
    }
}

impl Module for AxialAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.along_x.visit(&join(prefix, "along_x"), f);
        self.along_y.visit(&join(prefix, "along_y"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.along_x.visit_mut(&join(prefix, "along_x"), f);
        self.along_y.visit_mut(&join(prefix, "along_y"), f);
    }
}
