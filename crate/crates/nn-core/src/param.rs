use crate::tensor::Tensor;

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning named parameters. Visit order must be stable: optimizers,
/// checkpoints and gradient reductions rely on it.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad.fill(0.0));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |name, _| out.push(name.to_string()));
        out
    }

    fn grads(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, p| out.push(p.grad.clone()));
        out
    }

    /// Adds gradients listed in visit order.
    fn accumulate_grads(&mut self, grads: &[Tensor]) {
        let mut i = 0;
        self.visit_mut("", &mut |_, p| {
            p.grad.add_assign(&grads[i]);
            i += 1;
        });
        assert_eq!(i, grads.len(), "gradient count mismatch");
    }

    fn scale_grads(&mut self, s: f64) {
        self.visit_mut("", &mut |_, p| {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        });
    }

    fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit("", &mut |_, p| sq += p.grad.dot(&p.grad));
        sq.sqrt()
    }
}
