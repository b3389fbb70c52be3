//! AdaLN-Zero conditioning.
//!
//! A conditioning vector `c` is mapped to per-sub-layer `(shift, scale, gate)`
//! chunks by `Linear(silu(c))`. The projection starts at zero, so every gated
//! sub-layer `x + gate ⊙ F(norm(x)(1 + scale) + shift)` is the identity at init.

use crate::linear::Linear;
use crate::ops::{layer_norm, layer_norm_backward, modulate, modulate_backward, silu, silu_grad, LayerNormCache};
use crate::param::{Module, Param};
use crate::tensor::Tensor;

/// Zero-initialized projection of a conditioning vector into `chunks`
/// vectors of width `dim`.
#[derive(Debug, Clone)]
pub struct AdaLnModulation {
    pub proj: Linear,
    pub dim: usize,
    pub chunks: usize,
}

impl AdaLnModulation {
    pub fn new(cond_dim: usize, dim: usize, chunks: usize) -> Self {
        Self { proj: Linear::zeros(cond_dim, dim * chunks), dim, chunks }
    }

    /// Flat `[chunks * dim]` modulation vector; chunk `i` is `out[i*dim..(i+1)*dim]`.
    pub fn forward(&self, cond: &[f64]) -> Vec<f64> {
        let act: Vec<f64> = cond.iter().map(|&c| silu(c)).collect();
        self.proj.forward_vec(&act)
    }

    /// Accumulates parameter gradients and returns `dcond`.
    pub fn backward(&mut self, cond: &[f64], dmod: &[f64]) -> Vec<f64> {
        let act: Vec<f64> = cond.iter().map(|&c| silu(c)).collect();
        let dact = self.proj.backward_vec(&act, dmod);
        dact.iter().zip(cond).map(|(d, &c)| d * silu_grad(c)).collect()
    }

    pub fn chunk<'a>(&self, m: &'a [f64], i: usize) -> &'a [f64] {
        &m[i * self.dim..(i + 1) * self.dim]
    }
}

impl Module for AdaLnModulation {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.proj.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.proj.visit_mut(prefix, f);
    }
}

/// `norm(x) ⊙ (1 + scale) + shift`.
pub fn pre_modulate(x: &Tensor, shift: &[f64], scale: &[f64]) -> (Tensor, LayerNormCache) {
    let (xhat, cache) = layer_norm(x);
    (modulate(&xhat, shift, scale), cache)
}

/// Returns `(dx, dshift, dscale)` for [`pre_modulate`].
pub fn pre_modulate_backward(cache: &LayerNormCache, scale: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (dxhat, dshift, dscale) = modulate_backward(&cache.xhat, scale, dy);
    (layer_norm_backward(cache, &dxhat), dshift, dscale)
}

/// One gated residual sub-layer `x + gate ⊙ F(pre_modulate(x))` with `F`
/// supplied as closures. Returns the output and the pieces the backward needs.
pub fn adaln_zero(
    x: &Tensor,
    shift: &[f64],
    scale: &[f64],
    gate: &[f64],
    f: impl FnOnce(&Tensor) -> Tensor,
) -> (Tensor, LayerNormCache, Tensor) {
    let (h, ln) = pre_modulate(x, shift, scale);
    let fx = f(&h);
    let mut y = x.clone();
    y.add_assign(&crate::ops::gate(&fx, gate));
    (y, ln, fx)
}

/// Gradients of [`adaln_zero`]: `(dx, dshift, dscale, dgate)`. `f_backward`
/// maps `dF` to `dh` (the gradient at F's input).
pub fn adaln_zero_backward(
    ln: &LayerNormCache,
    fx: &Tensor,
    scale: &[f64],
    gate: &[f64],
    dy: &Tensor,
    f_backward: impl FnOnce(&Tensor) -> Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (dfx, dgate) = crate::ops::gate_backward(fx, gate, dy);
    let dh = f_backward(&dfx);
    let (mut dx, dshift, dscale) = pre_modulate_backward(ln, scale, &dh);
    dx.add_assign(dy);
    (dx, dshift, dscale, dgate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gate_is_identity() {
        let mut rng = crate::rng::stream(0, "adaln");
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let m = AdaLnModulation::new(5, 4, 3);
        let v = m.forward(&[0.3, -1.0, 2.0, 0.0, 1.0]);
        let (y, _, _) = adaln_zero(&x, m.chunk(&v, 0), m.chunk(&v, 1), m.chunk(&v, 2), |h| h.scale(7.0));
        assert_eq!(y, x);
    }

    #[test]
    fn unit_gate_is_plain_residual() {
        let mut rng = crate::rng::stream(1, "adaln");
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let zeros = [0.0; 4];
        let (y, _, _) = adaln_zero(&x, &zeros, &zeros, &[1.0; 4], |h| h.map(f64::tanh));
        let (xhat, _) = layer_norm(&x);
        let want = x.add(&xhat.map(f64::tanh));
        assert!(y.max_abs_diff(&want) < 1e-15);
    }
}
