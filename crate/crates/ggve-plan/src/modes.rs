//! The five anchor/target training modes.

use nn_core::Tensor;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `anchors` clean context views and `targets` views to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u8; 2]", try_from = "[u8; 2]")]
pub struct ViewMode {
    pub anchors: u8,
    pub targets: u8,
}

impl ViewMode {
    /// `(0,1), (0,2), (0,3), (1,1), (2,1)`, the order used by mode weights.
    pub const ALL: [ViewMode; 5] = [
        ViewMode { anchors: 0, targets: 1 },
        ViewMode { anchors: 0, targets: 2 },
        ViewMode { anchors: 0, targets: 3 },
        ViewMode { anchors: 1, targets: 1 },
        ViewMode { anchors: 2, targets: 1 },
    ];

    pub fn new(anchors: u8, targets: u8) -> Result<Self> {
        let m = ViewMode { anchors, targets };
        if Self::ALL.contains(&m) {
            Ok(m)
        } else {
            Err(invalid(format!("mode ({anchors},{targets}) is not one of the five")))
        }
    }

    pub fn views(&self) -> usize {
        (self.anchors + self.targets) as usize
    }
}

impl From<ViewMode> for [u8; 2] {
    fn from(m: ViewMode) -> Self {
        [m.anchors, m.targets]
    }
}

impl TryFrom<[u8; 2]> for ViewMode {
    type Error = crate::error::PlanError;

    fn try_from(v: [u8; 2]) -> Result<Self> {
        ViewMode::new(v[0], v[1])
    }
}

/// Piecewise-constant mode mixture: the vector of the greatest threshold not
/// above the step applies; steps before the first threshold use the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    pub milestones: Vec<(u64, [f64; 5])>,
}

impl Default for ModeSchedule {
    /// Generation-heavy before step 1000, balanced afterwards.
    fn default() -> Self {
        Self { milestones: vec![(0, [0.5, 0.2, 0.2, 0.05, 0.05]), (1000, [0.2; 5])] }
    }
}

impl ModeSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.milestones.is_empty() {
            return Err(invalid("empty mode schedule"));
        }
        for w in self.milestones.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(invalid("milestone thresholds must increase"));
            }
        }
        for (step, p) in &self.milestones {
            if p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("milestone {step}: {p:?} is not a probability vector")));
            }
        }
        Ok(())
    }

    pub fn weights_at(&self, step: u64) -> &[f64; 5] {
        let i = self.milestones.iter().rposition(|(t, _)| *t <= step).unwrap_or(0);
        &self.milestones[i].1
    }
}

pub fn sample_mode(rng: &mut impl Rng, step: u64, schedule: &ModeSchedule) -> Result<ViewMode> {
    schedule.validate()?;
    let dist = WeightedIndex::new(schedule.weights_at(step)).map_err(|e| invalid(e.to_string()))?;
    Ok(ViewMode::ALL[dist.sample(rng)])
}

/// Anchor/target split of adjacent views with the control hint.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// View indices.
    pub anchors: Vec<usize>,
    pub targets: Vec<usize>,
    /// Per view.
    pub is_anchor: Vec<bool>,
    /// Per token, views concatenated in input order.
    pub anchor_mask: Vec<f64>,
    /// `[Σ tokens, C]`: clean latents at anchors, zero at targets.
    pub hint_latents: Tensor,
}

/// Splits `mode.views()` adjacent views. Mode (1,1) anchors the first view
/// and targets its neighbour; (2,1) anchors the two outer views and targets
/// the middle; generation modes target every view.
pub fn partition_views(latents: &[Tensor], mode: ViewMode) -> Result<Partition> {
    let mode = ViewMode::new(mode.anchors, mode.targets)?;
    if latents.len() != mode.views() {
        return Err(invalid(format!("mode ({},{}) needs {} views, got {}", mode.anchors, mode.targets, mode.views(), latents.len())));
    }
    if latents.windows(2).any(|w| w[0].cols() != w[1].cols()) {
        return Err(invalid("views disagree on latent width"));
    }
    let anchors: Vec<usize> = match (mode.anchors, mode.targets) {
        (1, 1) => vec![0],
        (2, 1) => vec![0, 2],
        _ => vec![],
    };
    let is_anchor: Vec<bool> = (0..latents.len()).map(|v| anchors.contains(&v)).collect();
    let targets = (0..latents.len()).filter(|v| !is_anchor[*v]).collect();
    let mut anchor_mask = Vec::new();
    let mut parts = Vec::with_capacity(latents.len());
    for (l, &a) in latents.iter().zip(&is_anchor) {
        anchor_mask.extend(std::iter::repeat_n(if a { 1.0 } else { 0.0 }, l.rows()));
        parts.push(if a { l.clone() } else { Tensor::zeros(l.shape()) });
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(Partition { anchors, targets, is_anchor, anchor_mask, hint_latents: Tensor::vstack(&refs) })
}

/// Mean over views of `loss · (down_weight if anchor else 1)`.
pub fn anchor_weighted_loss(per_view: &[f64], is_anchor: &[bool], down_weight: f64) -> Result<f64> {
    if per_view.len() != is_anchor.len() || per_view.is_empty() {
        return Err(invalid("one anchor flag per view loss is required"));
    }
    if !(0.0..=1.0).contains(&down_weight) {
        return Err(invalid(format!("down weight {down_weight} outside [0, 1]")));
    }
    let sum: f64 = per_view.iter().zip(is_anchor).map(|(&l, &a)| if a { down_weight * l } else { l }).sum();
    Ok(sum / per_view.len() as f64)
}

/// Default anchor down-weight.
pub const DEFAULT_ANCHOR_WEIGHT: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(anchor_weighted_loss(&[2.0, 4.0], &[false, false], 0.1).unwrap(), 3.0);
        assert_eq!(anchor_weighted_loss(&[2.0, 4.0], &[true, false], 0.0).unwrap(), 2.0);
        assert!((anchor_weighted_loss(&[2.0, 4.0], &[true, false], 0.1).unwrap() - 2.1).abs() < 1e-15);
        assert!(anchor_weighted_loss(&[2.0], &[true], 1.5).is_err());
    }

    #[test]
    fn mode_json_is_a_pair() {
        let m = ViewMode::new(2, 1).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), "[2,1]");
        assert!(serde_json::from_str::<ViewMode>("[1,2]").is_err());
    }
}
