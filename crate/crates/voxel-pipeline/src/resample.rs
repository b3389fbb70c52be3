use occ_core::{Se3Pose, SemanticOccupancyGrid};

/// Rigid transform applied to the scene content of a grid (for example a
/// lateral ego-path offset).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoShift {
    pub transform: Se3Pose,
}

impl EgoShift {
    pub fn translation(t: [f64; 3]) -> Self {
        Self { transform: Se3Pose::from_translation(t) }
    }

    pub fn inverse(&self) -> Self {
        Self { transform: self.transform.inverse() }
    }
}

/// Nearest-neighbour resampling: the output voxel centred at `x'` takes the
/// label of the input voxel containing `shift⁻¹(x')`, or free when that
/// point leaves the grid.
pub fn resample_occupancy(grid: &SemanticOccupancyGrid, shift: &EgoShift, free_class: u8) -> SemanticOccupancyGrid {
    let spec = grid.spec;
    let inv = shift.transform.inverse();
    let [nx, ny, nz] = spec.dims;
    let mut out = SemanticOccupancyGrid::filled(spec, free_class);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let p = inv.transform_point(spec.center([x, y, z]));
                if let Some(v) = spec.voxel_of(p) {
                    out.labels[spec.index(x, y, z)] = grid.get(v[0], v[1], v[2]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use occ_core::GridSpec;

    #[test]
    fn identity_and_one_voxel() {
        let spec = GridSpec::centered([5, 3, 2], 0.4, -1.0);
        let labels = (0..spec.len()).map(|i| (i % 7) as u8).collect();
        let g = SemanticOccupancyGrid { spec, labels };
        assert_eq!(resample_occupancy(&g, &EgoShift::default(), 9), g);
        let s = resample_occupancy(&g, &EgoShift::translation([0.4, 0.0, 0.0]), 9);
        for y in 0..3 {
            for z in 0..2 {
                assert_eq!(s.get(0, y, z), 9);
                for x in 1..5 {
                    assert_eq!(s.get(x, y, z), g.get(x - 1, y, z));
                }
            }
        }
    }
}
