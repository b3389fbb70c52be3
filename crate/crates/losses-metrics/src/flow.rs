//! Rectified-flow training objective pieces.

use occ_core::BevLayout;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LossError, Result};

pub const DEFAULT_LOGIT_LOCATION: f64 = 0.0;
pub const DEFAULT_LOGIT_SCALE: f64 = 1.0;
/// Rare-coverage boost in [`small_object_weights`].
pub const DEFAULT_RARE_BETA: f64 = 4.0;

/// A noised latent together with its noise and time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
    pub tau: f64,
    pub z_tau: Vec<f64>,
}

impl FlowSample {
    pub fn new(z: Vec<f64>, eps: Vec<f64>, tau: f64) -> Self {
        let z_tau = flow_interpolate(&z, &eps, tau);
        Self { z, eps, tau, z_tau }
    }

    pub fn velocity_target(&self) -> Vec<f64> {
        velocity_target(&self.z, &self.eps)
    }
}

/// `(1 − τ) z + τ ε`.
pub fn flow_interpolate(z: &[f64], eps: &[f64], tau: f64) -> Vec<f64> {
    debug_assert_eq!(z.len(), eps.len());
    z.iter().zip(eps).map(|(&a, &e)| (1.0 - tau) * a + tau * e).collect()
}

/// `ε − z`, the τ-derivative of [`flow_interpolate`].
pub fn velocity_target(z: &[f64], eps: &[f64]) -> Vec<f64> {
    z.iter().zip(eps).map(|(&a, &e)| e - a).collect()
}

/// Token-weighted MSE. `pred`/`target` hold `weights.len()` tokens of equal
/// width; weights are rescaled to mean 1 before use. Returns `(loss, dpred)`.
pub fn flow_matching_loss(pred: &[f64], target: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || weights.is_empty() || pred.len() % weights.len() != 0 {
        return Err(LossError::Shape(format!(
            "pred {}, target {}, {} token weights",
            pred.len(),
            target.len(),
            weights.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|&&w| !(w >= 0.0)) {
        return Err(LossError::NegativeWeight(w));
    }
    let sum: f64 = weights.iter().sum();
    if sum == 0.0 {
        return Err(LossError::ZeroWeights);
    }
    let norm = weights.len() as f64 / sum;
    let width = pred.len() / weights.len();
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (tok, &w) in weights.iter().enumerate() {
        let w = w * norm;
        for j in tok * width..(tok + 1) * width {
            let d = pred[j] - target[j];
            loss += w * d * d;
            grad[j] = 2.0 * w * d / n;
        }
    }
    Ok((loss / n, grad))
}

/// `sigmoid(N(location, scale²))`, kept strictly inside (0, 1).
pub fn sample_logit_normal(rng: &mut impl Rng, location: f64, scale: f64) -> f64 {
    assert!(scale > 0.0, "logit-normal scale must be positive");
    let x = location + scale * rng.sample::<f64, _>(StandardNormal);
    let tau = 1.0 / (1.0 + (-x).exp());
    tau.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Logit-normal time at probability `u ∈ (0, 1)`: `sigmoid(location +
/// scale·Φ⁻¹(u))`. With `u` uniform this has the same law as
/// [`sample_logit_normal`]; stratified `u` gives low-variance batches.
pub fn logit_normal_quantile(u: f64, location: f64, scale: f64) -> f64 {
    assert!(scale > 0.0, "logit-normal scale must be positive");
    let u = u.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    let x = location + scale * Normal::standard().inverse_cdf(u);
    let tau = 1.0 / (1.0 + (-x).exp());
    tau.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Per-token weight `1 + β · r`, where `r` is the fraction of the token's
/// `patch × patch` layout cells carrying any rare-channel bit. Tokens are
/// ordered x-major over the `(W/patch) × (H/patch)` token grid.
pub fn small_object_weights(layout: &BevLayout, rare_channels: &[u8], beta: f64, patch: usize) -> Result<Vec<f64>> {
    let (w, h) = (layout.spec.width, layout.spec.height);
    if patch == 0 || w % patch != 0 || h % patch != 0 {
        return Err(LossError::Shape(format!("patch {patch} does not tile a {w}×{h} layout")));
    }
    if beta < 0.0 {
        return Err(LossError::Invalid(format!("beta {beta} < 0")));
    }
    let mask: u16 = rare_channels.iter().fold(0, |m, &c| m | (1u16 << c));
    let (tw, th) = (w / patch, h / patch);
    let area = (patch * patch) as f64;
    let mut out = Vec::with_capacity(tw * th);
    for tx in 0..tw {
        for ty in 0..th {
            let mut rare = 0usize;
            for x in tx * patch..(tx + 1) * patch {
                for y in ty * patch..(ty + 1) * patch {
                    if layout.get(x, y) & mask != 0 {
                        rare += 1;
                    }
                }
            }
            out.push(1.0 + beta * rare as f64 / area);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use occ_core::LayoutSpec;
    use rand::SeedableRng;

    #[test]
    fn logit_normal_quantile_inverts_the_cdf() {
        assert!((logit_normal_quantile(0.5, 0.0, 1.0) - 0.5).abs() < 1e-15);
        // Φ(1) = 0.8413447460685429.
        let t = logit_normal_quantile(0.841_344_746_068_542_9, 0.0, 1.0);
        assert!((t - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-9);
        let a = logit_normal_quantile(0.2, 0.3, 2.0);
        let b = logit_normal_quantile(0.8, 0.3, 2.0);
        assert!(a < b);
        assert!((0.0..1.0).contains(&logit_normal_quantile(0.0, 0.0, 1.0)));
        assert!(logit_normal_quantile(1.0, 0.0, 1.0) < 1.0);
    }

    #[test]
    fn interpolant_examples() {
        assert_eq!(flow_interpolate(&[2.0], &[5.0], 0.0), vec![2.0]);
        assert_eq!(flow_interpolate(&[2.0], &[5.0], 1.0), vec![5.0]);
        let s = FlowSample::new(vec![2.0], vec![0.0], 0.5);
        assert_eq!(s.z_tau, vec![1.0]);
        assert_eq!(s.velocity_target(), vec![-2.0]);
    }

    #[test]
    fn flow_loss_examples() {
        assert_eq!(flow_matching_loss(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap().0, 0.0);
        let (l, _) = flow_matching_loss(&[1.0, 5.0], &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        let (l, _) = flow_matching_loss(&[1.0, 3.0], &[0.0, 0.0], &[7.0, 7.0]).unwrap();
        assert!((l - 5.0).abs() < 1e-15);
        assert!(matches!(flow_matching_loss(&[1.0], &[0.0], &[0.0]), Err(LossError::ZeroWeights)));
        assert!(flow_matching_loss(&[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn logit_normal_limits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t = sample_logit_normal(&mut rng, 1e6, 1.0);
        assert!(t < 1.0 && t > 1.0 - 1e-15);
        let t = sample_logit_normal(&mut rng, -1e6, 1.0);
        assert!(t > 0.0 && t < 1e-300);
    }

    #[test]
    fn weights_examples() {
        let spec = LayoutSpec { width: 4, height: 4, resolution: 1.0, channels: 5 };
        let mut l = BevLayout::empty(spec);
        assert!(small_object_weights(&l, &[1], 4.0, 2).unwrap().iter().all(|&w| w == 1.0));
        for x in 0..2 {
            for y in 2..4 {
                l.set(x, y, 1);
            }
        }
        l.set(3, 3, 0);
        assert_eq!(small_object_weights(&l, &[1], 4.0, 2).unwrap(), vec![1.0, 5.0, 1.0, 1.0]);
        assert!(small_object_weights(&l, &[1], 4.0, 3).is_err());
    }
}
