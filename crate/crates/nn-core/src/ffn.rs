use rand::Rng;

use crate::linear::Linear;
use crate::ops::{silu, silu_grad};
use crate::param::{join, Module, Param};
use crate::tensor::Tensor;

/// SwiGLU feed-forward: `y = (silu(a) ⊙ b) W_out` where `[a | b] = x W_in`.
#[derive(Debug, Clone)]
pub struct SwiGlu {
    pub w_in: Linear,
    pub w_out: Linear,
}

#[derive(Debug, Clone)]
pub struct SwiGluCache {
    x: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

impl SwiGlu {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self { w_in: Linear::new(dim, 2 * hidden, rng), w_out: Linear::new(hidden, dim, rng) }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_out.input_dim()
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, SwiGluCache) {
        let pre = self.w_in.forward(x);
        let h = self.hidden_dim();
        let mut hidden = Tensor::zeros(&[x.rows(), h]);
        for (out, row) in hidden.data_mut().chunks_exact_mut(h).zip(pre.data().chunks_exact(2 * h)) {
            for j in 0..h {
                out[j] = silu(row[j]) * row[h + j];
            }
        }
        let y = self.w_out.forward(&hidden);
        (y, SwiGluCache { x: x.clone(), pre, hidden })
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, cache: &SwiGluCache, dy: &Tensor) -> Tensor {
        let dhidden = self.w_out.backward(&cache.hidden, dy);
        let h = self.hidden_dim();
        let mut dpre = Tensor::zeros(cache.pre.shape());
        for ((d, row), dh) in dpre
            .data_mut()
            .chunks_exact_mut(2 * h)
            .zip(cache.pre.data().chunks_exact(2 * h))
            .zip(dhidden.data().chunks_exact(h))
        {
            for j in 0..h {
                d[j] = dh[j] * row[h + j] * silu_grad(row[j]);
                d[h + j] = dh[j] * silu(row[j]);
            }
        }
        self.w_in.backward(&cache.x, &dpre)
    }
}

impl Module for SwiGlu {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.w_in.visit(&join(prefix, "w_in"), f);
        self.w_out.visit(&join(prefix, "w_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.w_in.visit_mut(&join(prefix, "w_in"), f);
        self.w_out.visit_mut(&join(prefix, "w_out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_zero_output() {
        let mut rng = crate::rng::stream(0, "ffn");
        let f = SwiGlu::new(4, 6, &mut rng);
        let (y, _) = f.forward(&Tensor::zeros(&[3, 4]));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case() {
        let mut f = SwiGlu {
            w_in: Linear::zeros(1, 2),
            w_out: Linear::zeros(1, 1),
        };
        f.w_in.weight.value.data_mut().copy_from_slice(&[1.0, 1.0]);
        f.w_out.weight.value.data_mut()[0] = 1.0;
        let (y, _) = f.forward(&Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        let want = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((y.data()[0] - want).abs() < 1e-15);
        assert!((y.data()[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }
}
