//! Stateless differentiable primitives on 2D `[rows, cols]` tensors.

use crate::error::{NnError, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `y = x W + b` for `x[n, in]`, `W[in, out]`, `b[out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.cols() != w.rows() || b.len() != w.cols() {
        return Err(NnError::Shape(format!(
            "linear: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut y = matmul(x, w);
    y.add_row_vector(b.data());
    Ok(y)
}

/// Gradients `(dx, dW, db)` of `y = x W + b`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let dx = matmul_nt(dy, w);
    let dw = matmul_tn(x, dy);
    let db = Tensor::from_vec(&[w.cols()], dy.sum_rows()).expect("bias shape");
    (dx, dw, db)
}

pub const LN_EPS: f64 = 1e-6;

/// Cache for a non-affine layer norm over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &Tensor) -> (Tensor, LayerNormCache) {
    let c = x.cols();
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for row in xhat.data_mut().chunks_exact_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * r);
        rstd.push(r);
    }
    (xhat.clone(), LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward(cache: &LayerNormCache, dy: &Tensor) -> Tensor {
    let c = dy.cols();
    let mut dx = dy.clone();
    for (r, (drow, xrow)) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)).enumerate() {
        let mean_dy = drow.iter().sum::<f64>() / c as f64;
        let mean_dyx = drow.iter().zip(xrow).map(|(d, x)| d * x).sum::<f64>() / c as f64;
        let rs = cache.rstd[r];
        for (d, x) in drow.iter_mut().zip(xrow) {
            *d = rs * (*d - mean_dy - x * mean_dyx);
        }
    }
    dx
}

/// `y = xhat ⊙ (1 + scale) + shift` with per-column `scale`/`shift`.
pub fn modulate(xhat: &Tensor, shift: &[f64], scale: &[f64]) -> Tensor {
    let c = xhat.cols();
    let mut y = xhat.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for j in 0..c {
            row[j] = row[j] * (1.0 + scale[j]) + shift[j];
        }
    }
    y
}

/// Returns `(dxhat, dshift, dscale)`.
pub fn modulate_backward(xhat: &Tensor, scale: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c = dy.cols();
    let mut dx = dy.clone();
    let mut dshift = vec![0.0; c];
    let mut dscale = vec![0.0; c];
    for (drow, xrow) in dx.data_mut().chunks_exact_mut(c).zip(xhat.data().chunks_exact(c)) {
        for j in 0..c {
            dshift[j] += drow[j];
            dscale[j] += drow[j] * xrow[j];
            drow[j] *= 1.0 + scale[j];
        }
    }
    (dx, dshift, dscale)
}

/// Per-column gate: `y = x ⊙ gate`.
pub fn gate(x: &Tensor, g: &[f64]) -> Tensor {
    let c = x.cols();
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for (v, gj) in row.iter_mut().zip(g) {
            *v *= gj;
        }
    }
    y
}

/// Returns `(dx, dgate)`.
pub fn gate_backward(x: &Tensor, g: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>) {
    let c = x.cols();
    let mut dg = vec![0.0; c];
    let mut dx = dy.clone();
    for (drow, xrow) in dx.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
        for j in 0..c {
            dg[j] += drow[j] * xrow[j];
            drow[j] *= g[j];
        }
    }
    (dx, dg)
}

/// Row-wise softmax of logits.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_examples() {
        let x = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[7.0]);

        let mut rng = crate::rng::stream(0, "t");
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let y = linear(&x, &Tensor::eye(4), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y, x);
        assert!(linear(&x, &Tensor::eye(3), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn silu_of_one() {
        assert!((silu(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(silu(0.0), 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = crate::rng::stream(0, "ln");
        let x = Tensor::randn(&[4, 16], 3.0, &mut rng);
        let (y, _) = layer_norm(&x);
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| v * v).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }
}
