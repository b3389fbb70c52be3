use std::cmp::Ordering;

use occ_core::PanopticLabel;

use crate::cloud::LabeledPointCloud;
use crate::error::{Result, VoxelError};

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Majority label of each query's `k` nearest labeled points (exact search,
/// distance ties broken by point index). Label ties go to the label whose
/// member is nearest, then to the smaller label. `k` is clamped to the
/// labeled-set size.
pub fn knn_propagate(labeled: &LabeledPointCloud, query: &[[f64; 3]], k: usize) -> Result<Vec<PanopticLabel>> {
    labeled.validate()?;
    if labeled.is_empty() {
        return Err(VoxelError::EmptyLabeled);
    }
    if k == 0 {
        return Err(VoxelError::ZeroK);
    }
    if let Some(i) = query.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(VoxelError::NonFinite(i));
    }
    let k = k.min(labeled.len());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(labeled.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    Ok(query
        .iter()
        .map(|q| {
            order.clear();
            order.extend(labeled.points.iter().enumerate().map(|(i, p)| (dist2(q, p), i)));
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, cmp);
                order.truncate(k);
            }
            order.sort_unstable_by(cmp);
            // (label, count, rank of nearest member)
            let mut tally: Vec<(PanopticLabel, usize, usize)> = Vec::with_capacity(k);
            for (rank, &(_, i)) in order.iter().enumerate() {
                let l = labeled.labels[i];
                match tally.iter_mut().find(|t| t.0 == l) {
                    Some(t) => t.1 += 1,
                    None => tally.push((l, 1, rank)),
                }
            }
            tally
                .into_iter()
                .min_by(|a, b| match b.1.cmp(&a.1) {
                    Ordering::Equal => a.2.cmp(&b.2).then(a.0.cmp(&b.0)),
                    o => o,
                })
                .expect("k ≥ 1")
                .0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> LabeledPointCloud {
        LabeledPointCloud::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]],
            vec![1001, 2000, 2000, 3000],
        )
        .unwrap()
    }

    #[test]
    fn coincident_k1() {
        assert_eq!(knn_propagate(&cloud(), &[[5.0, 5.0, 5.0]], 1).unwrap(), vec![3000]);
    }

    #[test]
    fn two_of_three() {
        assert_eq!(knn_propagate(&cloud(), &[[0.1, 0.1, 0.0]], 3).unwrap(), vec![2000]);
    }

    #[test]
    fn tie_goes_to_nearest_member() {
        // neighbours: 1001 (nearest), 2000 → 1 vs 1 tie
        assert_eq!(knn_propagate(&cloud(), &[[0.0, 0.0, 0.0]], 2).unwrap(), vec![1001]);
    }

    #[test]
    fn k_clamped_and_errors() {
        assert_eq!(knn_propagate(&cloud(), &[[9.0, 9.0, 9.0]], 10).unwrap(), vec![2000]);
        assert!(knn_propagate(&LabeledPointCloud::default(), &[[0.0; 3]], 1).is_err());
        assert!(knn_propagate(&cloud(), &[[0.0; 3]], 0).is_err());
    }
}
