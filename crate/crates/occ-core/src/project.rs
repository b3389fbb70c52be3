use crate::grid::SemanticOccupancyGrid;
use crate::schema::LabelSchema;

/// 2D class map over grid columns, stored x-major like [`crate::BevLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct BevClassMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl BevClassMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[x * self.height + y]
    }
}

/// Top-down projection: each column takes the class of its lowest non-free
/// voxel, or the free class when the column is empty.
pub fn bev_topdown_project(grid: &SemanticOccupancyGrid, schema: &LabelSchema) -> BevClassMap {
    let [nx, ny, nz] = grid.spec.dims;
    let free = schema.free_class;
    let labels = grid
        .labels
        .chunks_exact(nz)
        .map(|col| col.iter().copied().find(|&l| l != free).unwrap_or(free))
        .collect();
    BevClassMap { width: nx, height: ny, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};

    #[test]
    fn all_free() {
        let schema = LabelSchema::nuscenes_default();
        let g = SemanticOccupancyGrid::filled(GridSpec::centered([4, 3, 5], 0.4, -1.0), schema.free_class);
        let m = bev_topdown_project(&g, &schema);
        assert!(m.labels.iter().all(|&l| l == schema.free_class));
        assert_eq!((m.width, m.height), (4, 3));
    }

    #[test]
    fn lowest_z_wins() {
        let schema = LabelSchema::nuscenes_default();
        let mut g = SemanticOccupancyGrid::filled(GridSpec::centered([2, 2, 8], 0.4, -1.0), schema.free_class);
        g.set(1, 0, 0, 4);
        g.set(1, 0, 5, 15);
        g.set(0, 1, 3, 7);
        let m = bev_topdown_project(&g, &schema);
        assert_eq!(m.get(1, 0), 4);
        assert_eq!(m.get(0, 1), 7);
        assert_eq!(m.get(0, 0), schema.free_class);
    }

    #[test]
    fn random_matches_column_scan() {
        let schema = LabelSchema::toy();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let spec = GridSpec::centered([8, 8, 4], 0.4, -1.0);
            let labels = (0..spec.len())
                .map(|_| if rng.random_bool(0.7) { schema.free_class } else { rng.random_range(0..5) })
                .collect();
            let g = SemanticOccupancyGrid { spec, labels };
            let m = bev_topdown_project(&g, &schema);
            for x in 0..8 {
                for y in 0..8 {
                    let mut want = schema.free_class;
                    for z in 0..4 {
                        if g.get(x, y, z) != schema.free_class {
                            want = g.get(x, y, z);
                            break;
                        }
                    }
                    assert_eq!(m.get(x, y), want);
                }
            }
        }
    }
}
