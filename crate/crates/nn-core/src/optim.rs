//! AdamW, learning-rate schedule, gradient clipping and parameter EMA.

use crate::param::Module;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to parameters of rank ≥ 2 only.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// AdamW with moment buffers stored in module visit order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update at learning rate `lr` for every parameter.
    pub fn update(&mut self, model: &mut dyn Module, lr: f64) {
        self.update_with(model, lr, &|_| 1.0);
    }

    /// One update where parameter `name` uses `lr * lr_mult(name)`. A
    /// multiplier of zero freezes the parameter (its moments are not touched).
    pub fn update_with(&mut self, model: &mut dyn Module, lr: f64, lr_mult: &dyn Fn(&str) -> f64) {
        if self.m.is_empty() {
            model.visit("", &mut |_, p| {
                self.m.push(Tensor::zeros(p.value.shape()));
                self.v.push(Tensor::zeros(p.value.shape()));
            });
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.visit_mut("", &mut |name, p| {
            let idx = i;
            i += 1;
            let mult = lr_mult(name);
            if mult == 0.0 {
                return;
            }
            let lr = lr * mult;
            let decay = if p.value.shape().len() >= 2 { c.weight_decay } else { 0.0 };
            let (m, v) = (ms[idx].data_mut(), vs[idx].data_mut());
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + c.eps) + decay * *w);
            }
        });
        assert_eq!(i, ms.len(), "parameter set changed between optimizer steps");
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(model: &mut dyn Module, max_norm: f64) -> f64 {
    let norm = model.grad_norm();
    if norm > max_norm && norm > 0.0 {
        model.scale_grads(max_norm / norm);
    }
    norm
}

/// Linear warmup followed by cosine decay to `base * min_ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: u64,
    pub total: u64,
    pub min_ratio: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, warmup: 0, total: 0, min_ratio: 1.0 }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        if self.total <= self.warmup {
            return self.base;
        }
        let p = ((step - self.warmup) as f64 / (self.total - self.warmup) as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
        self.base * (self.min_ratio + (1.0 - self.min_ratio) * cos)
    }
}

/// Exponential moving average of parameters, `shadow ← d·shadow + (1-d)·θ`.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    shadow: Vec<Tensor>,
}

impl Ema {
    pub fn new(model: &dyn Module, decay: f64) -> Self {
        let mut shadow = Vec::new();
        model.visit("", &mut |_, p| shadow.push(p.value.clone()));
        Self { decay, shadow }
    }

    pub fn update(&mut self, model: &dyn Module) {
        let mut i = 0;
        let d = self.decay;
        model.visit("", &mut |_, p| {
            for (s, &w) in self.shadow[i].data_mut().iter_mut().zip(p.value.data()) {
                *s = d * *s + (1.0 - d) * w;
            }
            i += 1;
        });
    }

    /// Overwrites the model parameters with the averaged values.
    pub fn copy_to(&self, model: &mut dyn Module) {
        let mut i = 0;
        model.visit_mut("", &mut |_, p| {
            p.value = self.shadow[i].clone();
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::Linear;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut lin = Linear::zeros(1, 1);
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..500 {
            lin.zero_grad();
            let w = lin.weight.value.data()[0];
            lin.weight.grad.data_mut()[0] = 2.0 * (w - 3.0);
            opt.update(&mut lin, 0.05);
        }
        assert!((lin.weight.value.data()[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn zero_multiplier_freezes() {
        let mut lin = Linear::zeros(2, 2);
        lin.weight.grad.fill(1.0);
        lin.bias.grad.fill(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.update_with(&mut lin, 0.1, &|n| if n == "weight" { 0.0 } else { 1.0 });
        assert!(lin.weight.value.data().iter().all(|&v| v == 0.0));
        assert!(lin.bias.value.data().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule { base: 1.0, warmup: 10, total: 110, min_ratio: 0.1 };
        assert!((s.at(0) - 0.1).abs() < 1e-12);
        assert!((s.at(9) - 1.0).abs() < 1e-12);
        assert!((s.at(10) - 1.0).abs() < 1e-12);
        assert!((s.at(110) - 0.1).abs() < 1e-12);
        assert!(s.at(60) < 1.0 && s.at(60) > 0.1);
    }

    #[test]
    fn clipping_and_ema() {
        let mut lin = Linear::zeros(1, 2);
        lin.weight.grad.data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut lin, 1.0), 5.0);
        assert!((lin.grad_norm() - 1.0).abs() < 1e-12);
        let mut ema = Ema::new(&lin, 0.5);
        lin.weight.value.fill(2.0);
        ema.update(&lin);
        ema.copy_to(&mut lin);
        assert_eq!(lin.weight.value.data(), &[1.0, 1.0]);
    }
}
