//! Occupancy metrics: 3D volume, BEV top-down and BEV-vs-layout IoU.

use occ_core::{bev_topdown_project, BevLayout, LabelSchema, SemanticOccupancyGrid};
use serde::Serialize;

use crate::error::{LossError, Result};

/// `C × C` counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one `(gt, pred)` observation per label pair.
    pub fn accumulate_labels(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(LossError::Shape(format!("{} predicted vs {} ground-truth labels", pred.len(), gt.len())));
        }
        let c = self.classes;
        for (&p, &g) in pred.iter().zip(gt) {
            if p as usize >= c || g as usize >= c {
                return Err(LossError::TargetOutOfRange { target: p.max(g) as usize, classes: c });
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// IoU of class `c`, or `None` when it is absent from both prediction and ground truth.
    pub fn class_iou(&self, c: usize) -> Option<f64> {
        let diag = self.get(c, c);
        let row: u64 = (0..self.classes).map(|j| self.get(c, j)).sum();
        let col: u64 = (0..self.classes).map(|i| self.get(i, c)).sum();
        let union = row + col - diag;
        (union > 0).then(|| diag as f64 / union as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes).map(|c| self.class_iou(c)).collect()
    }
}

/// Adds `pred` vs `gt` voxel labels to `acc`.
pub fn confusion_accumulate(
    pred: &SemanticOccupancyGrid,
    gt: &SemanticOccupancyGrid,
    acc: &mut ConfusionMatrix,
) -> Result<()> {
    if pred.spec != gt.spec {
        return Err(LossError::Shape(format!("grid specs differ: {:?} vs {:?}", pred.spec, gt.spec)));
    }
    acc.accumulate_labels(&pred.labels, &gt.labels)
}

/// Mean IoU over non-free classes with a nonzero union.
pub fn miou(m: &ConfusionMatrix, schema: &LabelSchema) -> Option<f64> {
    let ious: Vec<f64> = (0..m.classes).filter(|&c| !schema.is_free(c as u8)).filter_map(|c| m.class_iou(c)).collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Occupied-vs-free IoU: every non-free class counts as "occupied".
pub fn binary_iou(m: &ConfusionMatrix, schema: &LabelSchema) -> Option<f64> {
    let f = schema.free_class as usize;
    let mut tp = 0u64;
    let mut union = 0u64;
    for g in 0..m.classes {
        for p in 0..m.classes {
            let n = m.get(g, p);
            let (go, po) = (g != f, p != f);
            if go && po {
                tp += n;
            }
            if go || po {
                union += n;
            }
        }
    }
    (union > 0).then(|| tp as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    pub miou: Option<f64>,
    pub iou: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

impl IouReport {
    pub fn from_matrix(m: &ConfusionMatrix, schema: &LabelSchema) -> Self {
        Self { miou: miou(m, schema), iou: binary_iou(m, schema), per_class: m.per_class_iou() }
    }
}

/// Adds the top-down projections of `pred` and `gt` to a 2D confusion matrix.
pub fn bev_topdown_accumulate(
    pred: &SemanticOccupancyGrid,
    gt: &SemanticOccupancyGrid,
    schema: &LabelSchema,
    acc: &mut ConfusionMatrix,
) -> Result<()> {
    if pred.spec != gt.spec {
        return Err(LossError::Shape(format!("grid specs differ: {:?} vs {:?}", pred.spec, gt.spec)));
    }
    let p = bev_topdown_project(pred, schema);
    let g = bev_topdown_project(gt, schema);
    acc.accumulate_labels(&p.labels, &g.labels)
}

/// Per-channel intersection and union counts of projected occupancy vs layout bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayoutIouAccumulator {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutReport {
    pub per_channel: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl LayoutIouAccumulator {
    pub fn new(channels: usize) -> Self {
        Self { intersection: vec![0; channels], union: vec![0; channels] }
    }

    pub fn accumulate(&mut self, grid: &SemanticOccupancyGrid, layout: &BevLayout, schema: &LabelSchema) -> Result<()> {
        layout.check_footprint(&grid.spec)?;
        let channels = self.intersection.len();
        if layout.spec.channels != channels {
            return Err(LossError::Shape(format!("layout has {} channels, expected {channels}", layout.spec.channels)));
        }
        let map = bev_topdown_project(grid, schema);
        for (&class, &bits) in map.labels.iter().zip(&layout.bits) {
            let pred_ch = schema.channel_of(class).map(|c| c as usize);
            for ch in 0..channels {
                let p = pred_ch == Some(ch);
                let g = bits >> ch & 1 == 1;
                if p && g {
                    self.intersection[ch] += 1;
                }
                if p || g {
                    self.union[ch] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> LayoutReport {
        let per_channel: Vec<Option<f64>> = self
            .intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect();
        let present: Vec<f64> = per_channel.iter().flatten().copied().collect();
        let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        LayoutReport { per_channel, mean }
    }
}

/// Per-channel IoU between the top-down projection of `grid` (classes mapped
/// to channels by the schema) and the layout bits, plus their mean over
/// channels with a nonzero union.
pub fn bev_vs_layout_metrics(grid: &SemanticOccupancyGrid, layout: &BevLayout, schema: &LabelSchema) -> Result<LayoutReport> {
    let mut acc = LayoutIouAccumulator::new(schema.layout_channels as usize);
    acc.accumulate(grid, layout, schema)?;
    Ok(acc.report())
}
