use occ_core::{OrientedBox, PanopticLabel};

use crate::error::{Result, VoxelError};

/// Points in metres with one panoptic label each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPointCloud {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<PanopticLabel>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<[f64; 3]>, labels: Vec<PanopticLabel>) -> Result<Self> {
        let c = Self { points, labels };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(VoxelError::LengthMismatch { points: self.points.len(), labels: self.labels.len() });
        }
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(VoxelError::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Scales the asset's canonical axis-aligned extents to the box's
/// `(length, width, height)` along box-frame `(x, y, z)`, centres it, then
/// applies the box pose.
pub fn fit_asset_to_box(asset: &[[f64; 3]], b: &OrientedBox) -> Result<Vec<[f64; 3]>> {
    b.validate()?;
    if let Some(i) = asset.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(VoxelError::NonFinite(i));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in asset {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let target = b.half_extents().map(|h| 2.0 * h);
    let mut scale = [0.0; 3];
    let mut mid = [0.0; 3];
    for a in 0..3 {
        let ext = hi[a] - lo[a];
        if !(ext > 0.0) {
            return Err(VoxelError::ZeroExtent(a));
        }
        scale[a] = target[a] / ext;
        mid[a] = 0.5 * (lo[a] + hi[a]);
    }
    let pose = b.pose();
    Ok(asset
        .iter()
        .map(|p| pose.transform_point([(p[0] - mid[0]) * scale[0], (p[1] - mid[1]) * scale[1], (p[2] - mid[2]) * scale[2]]))
        .collect())
}

/// Keeps points outside every box (box boundaries count as inside), in order.
pub fn remove_points_in_boxes(cloud: &LabeledPointCloud, boxes: &[OrientedBox]) -> LabeledPointCloud {
    let mut out = LabeledPointCloud::default();
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        if !boxes.iter().any(|b| b.contains(*p)) {
            out.points.push(*p);
            out.labels.push(l);
        }
    }
    out
}
