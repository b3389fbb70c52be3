//! Masked multi-head scaled dot-product attention.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::linear::Linear;
use crate::param::{join, Module, Param};
use crate::rope::{rope2d, rope2d_backward};
use crate::tensor::{gemm, Tensor};

/// Boolean `[queries, keys]` matrix; `true` means the query may attend to the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(NnError::Shape(format!("{} mask entries for {rows}x{cols}", allowed.len())));
        }
        if let Some(r) = (0..rows).find(|&r| !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a)) {
            return Err(NnError::EmptyMaskRow(r));
        }
        Ok(Self { rows, cols, allowed })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allowed: vec![true; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let allowed = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, allowed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.cols + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.cols..(q + 1) * self.cols]
    }
}

/// Per-head attention probabilities `[Sq, Sk]` kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub probs: Vec<Tensor>,
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&AttentionMask>, heads: usize) -> Result<usize> {
    let d = q.cols();
    if heads == 0 || d % heads != 0 || k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(NnError::Shape(format!(
            "attention q {:?}, k {:?}, v {:?}, {heads} heads",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if let Some(m) = mask {
        if m.rows != q.rows() || m.cols != k.rows() {
            return Err(NnError::Shape(format!("mask {}x{} for {}x{} logits", m.rows, m.cols, q.rows(), k.rows())));
        }
    }
    Ok(d / heads)
}

/// `out = softmax(q kᵀ / sqrt(hd) + mask) v`, computed per head on column
/// blocks of width `hd = cols / heads`. Disallowed keys get exactly zero weight.
pub fn masked_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&AttentionMask>,
    heads: usize,
) -> Result<(Tensor, AttentionCache)> {
    let hd = check_qkv(q, k, v, mask, heads)?;
    let (sq, sk, d) = (q.rows(), k.rows(), q.cols());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Tensor::zeros(&[sq, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let (qh, kh, vh) = (q.slice_cols(lo, hi), k.slice_cols(lo, hi), v.slice_cols(lo, hi));
        let mut p = Tensor::zeros(&[sq, sk]);
        gemm(sq, hd, sk, qh.data(), false, kh.data(), true, 0.0, p.data_mut());
        for (i, row) in p.data_mut().chunks_exact_mut(sk).enumerate() {
            let allowed = mask.map(|m| m.row(i));
            let ok = |j: usize| allowed.is_none_or(|a| a[j]);
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate() {
                *s *= scale;
                if ok(j) {
                    max = max.max(*s);
                }
            }
            let mut sum = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                *s = if ok(j) { (*s - max).exp() } else { 0.0 };
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
        }
        let mut oh = Tensor::zeros(&[sq, hd]);
        gemm(sq, sk, hd, p.data(), false, vh.data(), false, 0.0, oh.data_mut());
        for (orow, hrow) in out.data_mut().chunks_exact_mut(d).zip(oh.data().chunks_exact(hd)) {
            orow[lo..hi].copy_from_slice(hrow);
        }
        probs.push(p);
    }
    Ok((out, AttentionCache { probs }))
}

/// Gradients `(dq, dk, dv)` of [`masked_attention`].
pub fn masked_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cache: &AttentionCache,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let heads = cache.probs.len();
    let (sq, sk, d) = (q.rows(), k.rows(), q.cols());
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Tensor::zeros(&[sq, d]);
    let mut dk = Tensor::zeros(&[sk, d]);
    let mut dv = Tensor::zeros(&[sk, d]);
    for (h, p) in cache.probs.iter().enumerate() {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let (qh, kh, vh, doh) = (q.slice_cols(lo, hi), k.slice_cols(lo, hi), v.slice_cols(lo, hi), dout.slice_cols(lo, hi));
        let mut dvh = Tensor::zeros(&[sk, hd]);
        gemm(sk, sq, hd, p.data(), true, doh.data(), false, 0.0, dvh.data_mut());
        let mut ds = Tensor::zeros(&[sq, sk]);
        gemm(sq, hd, sk, doh.data(), false, vh.data(), true, 0.0, ds.data_mut());
        for (drow, prow) in ds.data_mut().chunks_exact_mut(sk).zip(p.data().chunks_exact(sk)) {
            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (g, pj) in drow.iter_mut().zip(prow) {
                *g = pj * (*g - dot) * scale;
            }
        }
        let mut dqh = Tensor::zeros(&[sq, hd]);
        gemm(sq, sk, hd, ds.data(), false, kh.data(), false, 0.0, dqh.data_mut());
        let mut dkh = Tensor::zeros(&[sk, hd]);
        gemm(sk, sq, hd, ds.data(), true, qh.data(), false, 0.0, dkh.data_mut());
        for (dst, src) in [(&mut dq, &dqh), (&mut dk, &dkh), (&mut dv, &dvh)] {
            for (drow, srow) in dst.data_mut().chunks_exact_mut(d).zip(src.data().chunks_exact(hd)) {
                drow[lo..hi].copy_from_slice(srow);
            }
        }
    }
    (dq, dk, dv)
}

/// Self-attention layer with input/output projections and optional 2D RoPE
/// on queries and keys.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    ctx: Tensor,
    attn: AttentionCache,
    positions: Option<Vec<[f64; 2]>>,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
        }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mask: Option<&AttentionMask>,
        positions: Option<&[[f64; 2]]>,
    ) -> Result<(Tensor, MhaCache)> {
        let mut q = self.wq.forward(x);
        let mut k = self.wk.forward(x);
        let v = self.wv.forward(x);
        if let Some(pos) = positions {
            q = rope2d(&q, pos, self.heads)?;
            k = rope2d(&k, pos, self.heads)?;
        }
        let (ctx, attn) = masked_attention(&q, &k, &v, mask, self.heads)?;
        let y = self.wo.forward(&ctx);
        Ok((y, MhaCache { x: x.clone(), q, k, v, ctx, attn, positions: positions.map(|p| p.to_vec()) }))
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, cache: &MhaCache, dy: &Tensor) -> Tensor {
        let dctx = self.wo.backward(&cache.ctx, dy);
        let (mut dq, mut dk, dv) = masked_attention_backward(&cache.q, &cache.k, &cache.v, &cache.attn, &dctx);
        if let Some(pos) = &cache.positions {
            dq = rope2d_backward(&dq, pos, self.heads).expect("validated in forward");
            dk = rope2d_backward(&dk, pos, self.heads).expect("validated in forward");
        }
        let mut dx = self.wq.backward(&cache.x, &dq);
        dx.add_assign(&self.wk.backward(&cache.x, &dk));
        dx.add_assign(&self.wv.backward(&cache.x, &dv));
        dx
    }

    /// Attention probabilities of each head from the last forward.
    pub fn probs(cache: &MhaCache) -> &[Tensor] {
        &cache.attn.probs
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(&[rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn single_key_returns_value() {
        let q = t(2, 2, &[0.3, -1.0, 2.0, 0.5]);
        let k = t(1, 2, &[1.0, 1.0]);
        let v = t(1, 2, &[4.0, -2.0]);
        let (out, _) = masked_attention(&q, &k, &v, Some(&AttentionMask::full(2, 1)), 1).unwrap();
        assert_eq!(out.data(), &[4.0, -2.0, 4.0, -2.0]);
    }

    #[test]
    fn identical_keys_split_evenly() {
        let q = t(1, 2, &[0.7, 0.1]);
        let k = t(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let v = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (out, cache) = masked_attention(&q, &k, &v, None, 1).unwrap();
        assert_eq!(cache.probs[0].data(), &[0.5, 0.5]);
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut rng = crate::rng::stream(3, "attn");
        let q = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let k = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let v = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let mask = AttentionMask::from_fn(4, 4, |i, j| j <= i).unwrap();
        let (_, cache) = masked_attention(&q, &k, &v, Some(&mask), 2).unwrap();
        for p in &cache.probs {
            for i in 0..4 {
                let row = p.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, &w) in row.iter().enumerate() {
                    if j > i {
                        assert_eq!(w, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_row_rejected() {
        assert!(matches!(AttentionMask::from_fn(2, 2, |i, _| i == 0), Err(NnError::EmptyMaskRow(1))));
        let q = Tensor::zeros(&[2, 4]);
        assert!(masked_attention(&q, &q, &q, Some(&AttentionMask::full(3, 2)), 1).is_err());
        assert!(masked_attention(&q, &q, &q, None, 3).is_err());
    }
}
