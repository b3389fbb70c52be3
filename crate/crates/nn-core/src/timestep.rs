use rand::Rng;

use crate::linear::Linear;
use crate::ops::{silu, silu_grad};
use crate::param::{join, Module, Param};
use crate::tensor::Tensor;

/// Multiplier applied to `t ∈ [0, 1]` before the sinusoidal features.
pub const TIME_SCALE: f64 = 1000.0;

/// `[cos(t·f_0), …, cos(t·f_{n-1}), sin(t·f_0), …]` with `f_i = 10000^(-i/n)`, `n = dim/2`.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t * TIME_SCALE * f).sin_cos();
        out[i] = c;
        out[half + i] = s;
    }
    out
}

/// Sinusoidal features followed by `Linear → SiLU → Linear`.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    pub fc1: Linear,
    pub fc2: Linear,
    pub freq_dim: usize,
}

#[derive(Debug, Clone)]
pub struct TimestepCache {
    feats: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl TimestepEmbedder {
    pub fn new(freq_dim: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self { fc1: Linear::new(freq_dim, dim, rng), fc2: Linear::new(dim, dim, rng), freq_dim }
    }

    pub fn forward(&self, t: f64) -> (Vec<f64>, TimestepCache) {
        let feats = sinusoidal_embedding(t, self.freq_dim);
        let pre = self.fc1.forward_vec(&feats);
        let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
        let out = self.fc2.forward_vec(&act);
        (out, TimestepCache { feats, pre, act })
    }

    /// Accumulates parameter gradients; the time input itself is not differentiated.
    pub fn backward(&mut self, cache: &TimestepCache, dy: &[f64]) {
        let dact = self.fc2.backward_vec(&cache.act, dy);
        let dpre: Vec<f64> = dact.iter().zip(&cache.pre).map(|(d, &p)| d * silu_grad(p)).collect();
        let x = Tensor::from_vec(&[1, cache.feats.len()], cache.feats.clone()).expect("vector");
        let d = Tensor::from_vec(&[1, dpre.len()], dpre).expect("vector");
        self.fc1.backward_params(&x, &d);
    }
}

impl Module for TimestepEmbedder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
