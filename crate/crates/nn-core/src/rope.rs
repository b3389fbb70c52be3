//! 2D rotary position embedding.
//!
//! Each head of width `hd` is split in two halves: the first half is rotated
//! by angles proportional to the token's x position, the second by its y
//! position. Within a half, consecutive pairs `(2i, 2i+1)` rotate at
//! frequency `base^(-2i / (hd/2))`.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const ROPE_BASE: f64 = 10_000.0;

fn apply(t: &Tensor, positions: &[[f64; 2]], heads: usize, sign: f64) -> Result<Tensor> {
    let d = t.cols();
    if heads == 0 || d % heads != 0 {
        return Err(NnError::Shape(format!("{d} columns not divisible into {heads} heads")));
    }
    let hd = d / heads;
    if hd % 4 != 0 {
        return Err(NnError::RopeHeadDim(hd));
    }
    if positions.len() != t.rows() {
        return Err(NnError::Shape(format!("{} positions for {} tokens", positions.len(), t.rows())));
    }
    let half = hd / 2;
    let pairs = half / 2;
    let freqs: Vec<f64> = (0..pairs).map(|i| ROPE_BASE.powf(-(2.0 * i as f64) / half as f64)).collect();
    let mut out = t.clone();
    for (row, pos) in out.data_mut().chunks_exact_mut(d).zip(positions) {
        for h in 0..heads {
            for axis in 0..2 {
                let base = h * hd + axis * half;
                for (i, f) in freqs.iter().enumerate() {
                    let (s, c) = (sign * pos[axis] * f).sin_cos();
                    let (a, b) = (row[base + 2 * i], row[base + 2 * i + 1]);
                    row[base + 2 * i] = a * c - b * s;
                    row[base + 2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
    Ok(out)
}

/// Rotates `tokens[S, heads*hd]` by their 2D grid positions.
pub fn rope2d(tokens: &Tensor, positions: &[[f64; 2]], heads: usize) -> Result<Tensor> {
    apply(tokens, positions, heads, 1.0)
}

/// Gradient of [`rope2d`]: the transpose of a rotation is the inverse rotation.
pub fn rope2d_backward(dy: &Tensor, positions: &[[f64; 2]], heads: usize) -> Result<Tensor> {
    apply(dy, positions, heads, -1.0)
}

/// Row-major positions of a `side × side` token grid: token `i` sits at `(i / side, i % side)`.
pub fn grid_positions(side: usize) -> Vec<[f64; 2]> {
    (0..side * side).map(|i| [(i / side) as f64, (i % side) as f64]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_identity() {
        let mut rng = crate::rng::stream(0, "rope");
        let t = Tensor::randn(&[3, 16], 1.0, &mut rng);
        let out = rope2d(&t, &[[0.0, 0.0]; 3], 2).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn norm_preserving() {
        let mut rng = crate::rng::stream(1, "rope");
        let t = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let pos: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 * 1.3, 7.0 - i as f64]).collect();
        let out = rope2d(&t, &pos, 1).unwrap();
        for r in 0..5 {
            let a: f64 = t.row(r).iter().map(|v| v * v).sum();
            let b: f64 = out.row(r).iter().map(|v| v * v).sum();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_head_dim() {
        let t = Tensor::zeros(&[1, 6]);
        assert!(matches!(rope2d(&t, &[[0.0, 0.0]], 1), Err(NnError::RopeHeadDim(6))));
        let t = Tensor::zeros(&[1, 8]);
        assert!(rope2d(&t, &[[0.0, 0.0]], 3).is_err());
    }
}
