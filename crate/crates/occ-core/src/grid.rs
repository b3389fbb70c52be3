use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::panoptic::{PanopticLabel, FREE_LABEL};
use crate::schema::LabelSchema;

/// Geometry of a dense voxel volume.
///
/// Voxel `(x, y, z)` spans `origin + [x, x+1) * voxel_size` along each axis.
/// Linear storage order is x-major, then y, then z (z varies fastest).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<Self> {
        let spec = Self { dims, origin, voxel_size };
        spec.validate()?;
        Ok(spec)
    }

    /// 256×256×25 at 0.4 m over [-51.2, 51.2]² × [-5, 5] m.
    pub fn full_scale() -> Self {
        Self { dims: [256, 256, 25], origin: [-51.2, -51.2, -5.0], voxel_size: 0.4 }
    }

    /// Grid centred on the ego in x/y with its floor at `z_min`.
    pub fn centered(dims: [usize; 3], voxel_size: f64, z_min: f64) -> Self {
        let half = |n: usize| -(n as f64) * voxel_size / 2.0;
        Self { dims, origin: [half(dims[0]), half(dims[1]), z_min], voxel_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(OccError::InvalidSpec(format!("zero dimension in {:?}", self.dims)));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(OccError::InvalidSpec(format!("voxel size {}", self.voxel_size)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(OccError::InvalidSpec("non-finite origin".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let z = index % self.dims[2];
        let xy = index / self.dims[2];
        [xy / self.dims[1], xy % self.dims[1], z]
    }

    /// Voxel containing a world point, or `None` outside the volume.
    #[inline]
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// World-space centre of voxel `v`.
    pub fn center(&self, v: [usize; 3]) -> [f64; 3] {
        let c = |a: usize| self.origin[a] + (v[a] as f64 + 0.5) * self.voxel_size;
        [c(0), c(1), c(2)]
    }

    /// World-space extent `(min, max)` of the whole volume.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let max = |a: usize| self.origin[a] + self.dims[a] as f64 * self.voxel_size;
        (self.origin, [max(0), max(1), max(2)])
    }
}

/// Dense voxel grid of internal class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticOccupancyGrid {
    pub spec: GridSpec,
    pub labels: Vec<u8>,
}

impl SemanticOccupancyGrid {
    pub fn filled(spec: GridSpec, class: u8) -> Self {
        Self { spec, labels: vec![class; spec.len()] }
    }

    pub fn from_labels(spec: GridSpec, labels: Vec<u8>, schema: &LabelSchema) -> Result<Self> {
        spec.validate()?;
        if labels.len() != spec.len() {
            return Err(OccError::InvalidSpec(format!(
                "{} labels for {} voxels",
                labels.len(),
                spec.len()
            )));
        }
        let grid = Self { spec, labels };
        grid.validate(schema)?;
        Ok(grid)
    }

    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        let n = schema.num_classes();
        match self.labels.iter().position(|&l| l as usize >= n) {
            Some(index) => Err(OccError::LabelExceedsClasses {
                label: self.labels[index] as u32,
                index,
                num_classes: n,
            }),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.spec.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, class: u8) {
        let i = self.spec.index(x, y, z);
        self.labels[i] = class;
    }

    /// Labels of one z-column, lowest first.
    pub fn column(&self, x: usize, y: usize) -> &[u8] {
        let start = self.spec.index(x, y, 0);
        &self.labels[start..start + self.spec.dims[2]]
    }
}

/// Dense voxel grid of panoptic labels (`class * 1000 + instance`).
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticVoxelGrid {
    pub spec: GridSpec,
    pub labels: Vec<PanopticLabel>,
}

impl PanopticVoxelGrid {
    pub fn free(spec: GridSpec) -> Self {
        Self { spec, labels: vec![FREE_LABEL; spec.len()] }
    }

    pub fn to_semantic(&self, schema: &LabelSchema) -> SemanticOccupancyGrid {
        SemanticOccupancyGrid {
            spec: self.spec,
            labels: self.labels.iter().map(|&l| schema.class_of_label(l)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let spec = GridSpec::centered([5, 4, 3], 0.5, -1.0);
        for i in 0..spec.len() {
            let [x, y, z] = spec.coords(i);
            assert_eq!(spec.index(x, y, z), i);
        }
        assert_eq!(spec.index(1, 0, 0), 12);
        assert_eq!(spec.index(0, 1, 0), 3);
    }

    #[test]
    fn full_scale_extent() {
        let spec = GridSpec::full_scale();
        let (lo, hi) = spec.bounds();
        assert_eq!(lo, [-51.2, -51.2, -5.0]);
        assert!((hi[0] - 51.2).abs() < 1e-9 && (hi[2] - 5.0).abs() < 1e-9);
        assert_eq!(spec, GridSpec::centered([256, 256, 25], 0.4, -5.0));
    }

    #[test]
    fn voxel_lookup() {
        let spec = GridSpec::new([4, 4, 2], [0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(spec.voxel_of([0.5, 3.9, 1.0]), Some([0, 3, 1]));
        assert_eq!(spec.voxel_of([4.0, 0.0, 0.0]), None);
        assert_eq!(spec.voxel_of([-0.01, 0.0, 0.0]), None);
        assert_eq!(spec.center([1, 2, 0]), [1.5, 2.5, 0.5]);
    }

    #[test]
    fn invalid_specs() {
        assert!(GridSpec::new([0, 1, 1], [0.0; 3], 1.0).is_err());
        assert!(GridSpec::new([1, 1, 1], [0.0; 3], 0.0).is_err());
        let schema = LabelSchema::toy();
        let spec = GridSpec::new([1, 1, 2], [0.0; 3], 1.0).unwrap();
        assert!(SemanticOccupancyGrid::from_labels(spec, vec![0, 6], &schema).is_err());
        assert!(SemanticOccupancyGrid::from_labels(spec, vec![0], &schema).is_err());
    }
}
