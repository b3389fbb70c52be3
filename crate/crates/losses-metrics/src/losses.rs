//! VAE reconstruction losses over `N × C` row-major logits/probabilities.
//!
//! Every loss returns `(value, gradient)` with the gradient shaped like its
//! first input.

use crate::error::{LossError, Result};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Weight of the Lovász-Softmax term.
pub const DEFAULT_LAMBDA_LOVASZ: f64 = 1.0;
/// Weight of the KL term.
pub const DEFAULT_LAMBDA_KL: f64 = 1e-4;

const NORM_TOL: f64 = 1e-6;

fn check_rows(values: &[f64], targets: &[u8], classes: usize) -> Result<usize> {
    if classes == 0 || values.len() != targets.len() * classes {
        return Err(LossError::Shape(format!("{} values for {} targets × {classes} classes", values.len(), targets.len())));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= classes) {
        return Err(LossError::TargetOutOfRange { target: t as usize, classes });
    }
    Ok(targets.len())
}

/// Row-wise softmax.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Maps a gradient w.r.t. softmax probabilities to one w.r.t. the logits.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for ((o, p), d) in out.chunks_exact_mut(classes).zip(probs.chunks_exact(classes)).zip(dprobs.chunks_exact(classes)) {
        let dot: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
        for j in 0..classes {
            o[j] = p[j] * (d[j] - dot);
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) against `targets`.
pub fn cross_entropy(logits: &[f64], targets: &[u8], classes: usize) -> Result<(f64, Vec<f64>)> {
    focal_loss(logits, targets, classes, 0.0, 1.0, None)
}

/// `(1/N) Σ_i w_i · (−α (1 − p_t)^γ log p_t)` with `p_t` the softmax
/// probability of voxel `i`'s target class. `voxel_weights` defaults to 1.
pub fn focal_loss(
    logits: &[f64],
    targets: &[u8],
    classes: usize,
    gamma: f64,
    alpha: f64,
    voxel_weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let n = check_rows(logits, targets, classes)?;
    if !(gamma >= 0.0) {
        return Err(LossError::Invalid(format!("focal gamma {gamma} < 0")));
    }
    if let Some(w) = voxel_weights {
        if w.len() != n {
            return Err(LossError::Shape(format!("{} voxel weights for {n} voxels", w.len())));
        }
    }
    let probs = softmax(logits, classes);
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let p = &probs[i * classes..(i + 1) * classes];
        let t = targets[i] as usize;
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let log_pt = row[t] - lse;
        let pt = p[t];
        // 1 - p_t summed from the other classes keeps precision when p_t ≈ 1.
        let q: f64 = p.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, v)| v).sum();
        let w = voxel_weights.map_or(1.0, |w| w[i]);
        let mod_factor = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        total += -w * alpha * mod_factor * log_pt;
        // dL/dz_j = w α g (δ_jt − p_j), g = γ p_t q^(γ−1) log p_t − q^γ.
        let lead = if gamma == 0.0 || q == 0.0 { 0.0 } else { gamma * pt * q.powf(gamma - 1.0) * log_pt };
        let g = w * alpha * (lead - mod_factor);
        let out = &mut grad[i * classes..(i + 1) * classes];
        for j in 0..classes {
            let delta = if j == t { 1.0 } else { 0.0 };
            out[j] = g * (delta - p[j]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Gradient of the Lovász extension of the Jaccard loss for errors sorted
/// in decreasing order, given the matching foreground indicators.
fn lovasz_grad(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    let mut jac = Vec::with_capacity(fg_sorted.len());
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        jac.push(1.0 - inter / union);
    }
    for i in (1..jac.len()).rev() {
        jac[i] -= jac[i - 1];
    }
    jac
}

/// Lovász-Softmax over classes present in `targets`. `probs` rows must sum
/// to 1 within 1e-6. Ties in the error ordering are broken by voxel index.
pub fn lovasz_softmax(probs: &[f64], targets: &[u8], classes: usize) -> Result<(f64, Vec<f64>)> {
    let n = check_rows(probs, targets, classes)?;
    for (row, p) in probs.chunks_exact(classes).enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(LossError::NotNormalized { row, sum });
        }
    }
    let mut grad = vec![0.0; probs.len()];
    let present: Vec<usize> = (0..classes).filter(|&c| targets.iter().any(|&t| t as usize == c)).collect();
    if present.is_empty() {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    for &c in &present {
        let err: Vec<f64> = (0..n)
            .map(|i| {
                let fg = if targets[i] as usize == c { 1.0 } else { 0.0 };
                (fg - probs[i * classes + c]).abs()
            })
            .collect();
        order.sort_by(|&a, &b| err[b].total_cmp(&err[a]).then(a.cmp(&b)));
        let fg_sorted: Vec<bool> = order.iter().map(|&i| targets[i] as usize == c).collect();
        let jg = lovasz_grad(&fg_sorted);
        for (rank, &i) in order.iter().enumerate() {
            total += err[i] * jg[rank];
            // d|fg − p|/dp = −1 on foreground, +1 on background.
            let sign = if fg_sorted[rank] { -1.0 } else { 1.0 };
            grad[i * classes + c] += sign * jg[rank] / present.len() as f64;
        }
    }
    Ok((total / present.len() as f64, grad))
}

/// `−0.5 · mean(1 + logvar − mu² − exp(logvar))` with gradients `(dmu, dlogvar)`.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if mu.len() != logvar.len() || mu.is_empty() {
        return Err(LossError::Shape(format!("mu {} vs logvar {}", mu.len(), logvar.len())));
    }
    let n = mu.len() as f64;
    let mut total = 0.0;
    let mut dmu = Vec::with_capacity(mu.len());
    let mut dlv = Vec::with_capacity(mu.len());
    for (&m, &lv) in mu.iter().zip(logvar) {
        let e = lv.exp();
        total += 1.0 + lv - m * m - e;
        dmu.push(m / n);
        dlv.push(-0.5 * (1.0 - e) / n);
    }
    Ok((-0.5 * total / n, dmu, dlv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_closed_form() {
        let (l, _) = focal_loss(&[0.0, 0.0], &[0], 2, 2.0, 1.0, None).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.173_286_795_139_986_3).abs() < 1e-12);
        let (l, _) = focal_loss(&[30.0, 0.0, 0.0], &[0], 3, 2.0, 1.0, None).unwrap();
        assert!(l < 1e-10);
    }

    #[test]
    fn focal_rejects_bad_input() {
        assert!(matches!(focal_loss(&[f64::NAN, 0.0], &[0], 2, 2.0, 1.0, None), Err(LossError::NonFinite(0))));
        assert!(focal_loss(&[0.0, 0.0], &[2], 2, 2.0, 1.0, None).is_err());
        assert!(focal_loss(&[0.0, 0.0], &[0], 2, -1.0, 1.0, None).is_err());
    }

    #[test]
    fn lovasz_examples() {
        let (l, _) = lovasz_softmax(&[1.0, 0.0, 0.0, 1.0], &[0, 1], 2).unwrap();
        assert_eq!(l, 0.0);
        let e = 0.3;
        let (l, _) = lovasz_softmax(&[1.0 - e, e], &[0], 2).unwrap();
        assert!((l - e).abs() < 1e-15);
        assert!(matches!(lovasz_softmax(&[0.5, 0.6], &[0], 2), Err(LossError::NotNormalized { row: 0, .. })));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_standard_normal(&[0.0], &[0.0]).unwrap().0, 0.0);
        assert_eq!(kl_standard_normal(&[1.0], &[0.0]).unwrap().0, 0.5);
    }
}
