use rand::Rng;

use crate::param::{join, Module, Param};
use crate::tensor::{matmul, matmul_nt, matmul_tn_acc, Tensor};

/// Dense layer `y = x W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Normal init with std `1/sqrt(in)`, zero bias.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::with_std(input, output, 1.0 / (input as f64).sqrt(), rng)
    }

    pub fn with_std(input: usize, output: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self { weight: Param::new(Tensor::randn(&[input, output], std, rng)), bias: Param::zeros(&[output]) }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Param::zeros(&[input, output]), bias: Param::zeros(&[output]) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = matmul(x, &self.weight.value);
        y.add_row_vector(self.bias.value.data());
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        matmul_tn_acc(x, dy, &mut self.weight.grad);
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(dy.sum_rows()) {
            *g += d;
        }
        matmul_nt(dy, &self.weight.value)
    }

    /// Parameter-only backward for when `dx` is not needed.
    pub fn backward_params(&mut self, x: &Tensor, dy: &Tensor) {
        matmul_tn_acc(x, dy, &mut self.weight.grad);
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(dy.sum_rows()) {
            *g += d;
        }
    }

    /// Forward for a single vector.
    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let t = Tensor::from_vec(&[1, x.len()], x.to_vec()).expect("vector");
        self.forward(&t).into_data()
    }

    pub fn backward_vec(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let xt = Tensor::from_vec(&[1, x.len()], x.to_vec()).expect("vector");
        let dyt = Tensor::from_vec(&[1, dy.len()], dy.to_vec()).expect("vector");
        self.backward(&xt, &dyt).into_data()
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn layer_matches_free_function() {
        let mut rng = crate::rng::stream(2, "lin");
        let l = Linear::new(3, 2, &mut rng);
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        assert_eq!(ops::linear(&x, &l.weight.value, &l.bias.value).unwrap(), l.forward(&x));
    }

    #[test]
    fn backward_matches_free_function() {
        let mut rng = crate::rng::stream(3, "lin");
        let mut l = Linear::new(3, 2, &mut rng);
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let dy = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let dx = l.backward(&x, &dy);
        let (dx2, dw2, db2) = ops::linear_backward(&x, &l.weight.value, &dy);
        assert!(dx.max_abs_diff(&dx2) < 1e-14);
        assert!(l.weight.grad.max_abs_diff(&dw2) < 1e-14);
        assert!(l.bias.grad.max_abs_diff(&db2) < 1e-14);
    }
}
