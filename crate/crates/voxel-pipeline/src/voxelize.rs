use occ_core::{GridSpec, PanopticVoxelGrid};

use crate::cloud::LabeledPointCloud;
use crate::error::Result;

/// Majority-vote voxelization. Each voxel takes the most frequent label of
/// the points inside it, ties going to the smaller label; empty voxels are
/// free and points outside the grid are ignored.
///
/// Votes are counted over a compacted label space: labels are replaced by
/// their rank among the distinct input labels, and `(voxel, rank)` pairs are
/// sorted and run-length counted, so memory is linear in the point count.
pub fn voxelize_majority(cloud: &LabeledPointCloud, spec: &GridSpec) -> Result<PanopticVoxelGrid> {
    cloud.validate()?;
    spec.validate()?;
    let mut distinct = cloud.labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut votes: Vec<(usize, u32)> = cloud
        .points
        .iter()
        .zip(&cloud.labels)
        .filter_map(|(p, l)| {
            let v = spec.voxel_of(*p)?;
            let rank = distinct.binary_search(l).expect("label collected above") as u32;
            Some((spec.index(v[0], v[1], v[2]), rank))
        })
        .collect();
    votes.sort_unstable();
    let mut grid = PanopticVoxelGrid::free(*spec);
    let mut i = 0;
    while i < votes.len() {
        let voxel = votes[i].0;
        let (mut best, mut best_count) = (0u32, 0usize);
        while i < votes.len() && votes[i].0 == voxel {
            let rank = votes[i].1;
            let start = i;
            while i < votes.len() && votes[i] == (voxel, rank) {
                i += 1;
            }
            // Ranks arrive in increasing order, so `>` keeps the smaller label on ties.
            if i - start > best_count {
                best = rank;
                best_count = i - start;
            }
        }
        grid.labels[voxel] = distinct[best as usize];
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use occ_core::panoptic::FREE_LABEL;

    fn spec() -> GridSpec {
        GridSpec::centered([4, 4, 2], 1.0, 0.0)
    }

    #[test]
    fn single_point() {
        let c = LabeledPointCloud::new(vec![[0.5, 0.5, 0.5]], vec![4001]).unwrap();
        let g = voxelize_majority(&c, &spec()).unwrap();
        assert_eq!(g.labels.iter().filter(|&&l| l == 4001).count(), 1);
        assert_eq!(g.labels.iter().filter(|&&l| l == FREE_LABEL).count(), 31);
        assert_eq!(g.labels[spec().index(2, 2, 0)], 4001);
    }

    #[test]
    fn majority_and_tie() {
        let p = [0.5, 0.5, 0.5];
        let c = LabeledPointCloud::new(vec![p, p, p], vec![15000, 4001, 4001]).unwrap();
        assert_eq!(voxelize_majority(&c, &spec()).unwrap().labels[spec().index(2, 2, 0)], 4001);
        let c = LabeledPointCloud::new(vec![p, p], vec![15000, 4001]).unwrap();
        assert_eq!(voxelize_majority(&c, &spec()).unwrap().labels[spec().index(2, 2, 0)], 4001);
        let c = LabeledPointCloud::new(vec![p, p, p], vec![15000, 15000, 4001]).unwrap();
        assert_eq!(voxelize_majority(&c, &spec()).unwrap().labels[spec().index(2, 2, 0)], 15000);
    }

    #[test]
    fn rejects_nan() {
        let c = LabeledPointCloud { points: vec![[f64::NAN, 0.0, 0.0]], labels: vec![1000] };
        assert!(voxelize_majority(&c, &spec()).is_err());
    }
}
