use losses_metrics::*;
use nn_core::gradcheck::grad_check;
use occ_core::{bev_topdown_project, BevLayout, GridSpec, LabelSchema, LayoutSpec, SemanticOccupancyGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

/// Direct `-log(e^{z_t} / Σ e^{z_j})`, independent of the focal code path.
fn ce_oracle(logits: &[f64], targets: &[u8], c: usize) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.chunks(c).zip(targets) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[t as usize].exp() / denom).ln();
    }
    total / targets.len() as f64
}

fn random_grid(rng: &mut ChaCha8Rng, spec: GridSpec, schema: &LabelSchema, p_free: f64) -> SemanticOccupancyGrid {
    let n = schema.num_classes() as u8;
    let labels = (0..spec.len())
        .map(|_| if rng.random_bool(p_free) { schema.free_class } else { rng.random_range(0..n) })
        .collect();
    SemanticOccupancyGrid { spec, labels }
}

#[test]
fn focal_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, c) = (7, 4);
    let logits = randn(&mut rng, n * c, 1.5);
    let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    for gamma in [0.0, 0.5, 1.0, 2.0] {
        let (_, g) = focal_loss(&logits, &targets, c, gamma, 0.7, Some(&weights)).unwrap();
        let e = grad_check(|x| focal_loss(x, &targets, c, gamma, 0.7, Some(&weights)).unwrap().0, &logits, &g, 1e-6);
        assert!(e < 1e-6, "gamma {gamma}: {e}");
    }
}

#[test]
fn lovasz_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, c) = (6, 3);
    let logits = randn(&mut rng, n * c, 1.0);
    let targets: Vec<u8> = vec![0, 1, 2, 0, 1, 1];
    // Differentiate through the softmax so the probe stays on the simplex.
    let loss = |z: &[f64]| lovasz_softmax(&softmax(z, c), &targets, c).unwrap().0;
    let p = softmax(&logits, c);
    let (_, dp) = lovasz_softmax(&p, &targets, c).unwrap();
    let dz = softmax_backward(&p, &dp, c);
    let e = grad_check(loss, &logits, &dz, 1e-6);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn kl_and_flow_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = randn(&mut rng, 6, 1.0);
    let lv = randn(&mut rng, 6, 0.5);
    let (_, dmu, dlv) = kl_standard_normal(&mu, &lv).unwrap();
    let e1 = grad_check(|x| kl_standard_normal(x, &lv).unwrap().0, &mu, &dmu, 1e-6);
    let e2 = grad_check(|x| kl_standard_normal(&mu, x).unwrap().0, &lv, &dlv, 1e-6);
    assert!(e1.max(e2) < 1e-6);
    let pred = randn(&mut rng, 8, 1.0);
    let target = randn(&mut rng, 8, 1.0);
    let w = [1.0, 3.0, 0.0, 2.0];
    let (_, g) = flow_matching_loss(&pred, &target, &w).unwrap();
    let e = grad_check(|x| flow_matching_loss(x, &target, &w).unwrap().0, &pred, &g, 1e-6);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn logit_normal_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let t = sample_logit_normal(&mut rng, 0.0, 1.0);
        assert!(t > 0.0 && t < 1.0);
        sum += t;
    }
    assert!((sum / n as f64 - 0.5).abs() < 0.01);
}

#[test]
fn random_grid_metrics_match_oracles() {
    let schema = LabelSchema::nuscenes_default();
    let c = schema.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = GridSpec::centered([8, 8, 4], 0.4, -1.0);
    for _ in 0..20 {
        let gt = random_grid(&mut rng, spec, &schema, 0.6);
        let pred = random_grid(&mut rng, spec, &schema, 0.6);
        let mut m = ConfusionMatrix::new(c);
        confusion_accumulate(&pred, &gt, &mut m).unwrap();
        let mut oracle = vec![vec![0u64; c]; c];
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..4 {
                    oracle[gt.get(x, y, z) as usize][pred.get(x, y, z) as usize] += 1;
                }
            }
        }
        for g in 0..c {
            for p in 0..c {
                assert_eq!(m.get(g, p), oracle[g][p]);
            }
        }
        assert_eq!(m.total(), spec.len() as u64);
        let mut selfm = ConfusionMatrix::new(c);
        confusion_accumulate(&gt, &gt, &mut selfm).unwrap();
        assert_eq!(miou(&selfm, &schema), Some(1.0));
        for iou in selfm.per_class_iou().into_iter().flatten() {
            assert_eq!(iou, 1.0);
        }
    }
}

#[test]
fn layout_from_own_projection_is_perfect() {
    let schema = LabelSchema::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = GridSpec::centered([8, 8, 4], 0.5, 0.0);
    let grid = random_grid(&mut rng, spec, &schema, 0.5);
    let map = bev_topdown_project(&grid, &schema);
    let mut layout = BevLayout::empty(LayoutSpec::for_grid(&spec, 5));
    for x in 0..8 {
        for y in 0..8 {
            if let Some(ch) = schema.channel_of(map.get(x, y)) {
                layout.set(x, y, ch as usize);
            }
        }
    }
    let r = bev_vs_layout_metrics(&grid, &layout, &schema).unwrap();
    for iou in r.per_channel.iter().flatten() {
        assert_eq!(*iou, 1.0);
    }
    assert_eq!(r.mean, Some(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn focal_gamma_zero_is_cross_entropy(seed: u64, n in 1usize..10, c in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = randn(&mut rng, n * c, 2.0);
        let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
        let (f, _) = focal_loss(&logits, &targets, c, 0.0, 1.0, None).unwrap();
        prop_assert!((f - ce_oracle(&logits, &targets, c)).abs() < 1e-12);
    }

    #[test]
    fn lovasz_nonnegative_and_zero_when_correct(seed: u64, n in 1usize..12, c in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
        let probs = softmax(&randn(&mut rng, n * c, 2.0), c);
        prop_assert!(lovasz_softmax(&probs, &targets, c).unwrap().0 >= 0.0);
        let mut onehot = vec![0.0; n * c];
        for (i, &t) in targets.iter().enumerate() {
            onehot[i * c + t as usize] = 1.0;
        }
        prop_assert_eq!(lovasz_softmax(&onehot, &targets, c).unwrap().0, 0.0);
    }

    #[test]
    fn metrics_invariant_to_accumulation_order(seed: u64) {
        let schema = LabelSchema::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::centered([4, 4, 2], 0.5, 0.0);
        let pairs: Vec<_> = (0..4)
            .map(|_| (random_grid(&mut rng, spec, &schema, 0.5), random_grid(&mut rng, spec, &schema, 0.5)))
            .collect();
        let mut a = ConfusionMatrix::new(6);
        let mut b = ConfusionMatrix::new(6);
        for (p, g) in &pairs {
            confusion_accumulate(p, g, &mut a).unwrap();
        }
        for (p, g) in pairs.iter().rev() {
            let mut part = ConfusionMatrix::new(6);
            confusion_accumulate(p, g, &mut part).unwrap();
            b.merge(&part);
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bev_vs_layout_matches_cell_oracle(seed: u64) {
        let schema = LabelSchema::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::centered([8, 8, 4], 0.5, 0.0);
        let grid = random_grid(&mut rng, spec, &schema, 0.6);
        let mut layout = BevLayout::empty(LayoutSpec::for_grid(&spec, 5));
        for b in layout.bits.iter_mut() {
            *b = rng.random_range(0..32u16);
        }
        let r = bev_vs_layout_metrics(&grid, &layout, &schema).unwrap();
        for ch in 0..5 {
            let (mut inter, mut union) = (0, 0);
            for x in 0..8 {
                for y in 0..8 {
                    let col: Vec<u8> = (0..4).map(|z| grid.get(x, y, z)).collect();
                    let top = col.iter().copied().find(|&l| l != schema.free_class).unwrap_or(schema.free_class);
                    let p = schema.layout_channel_map[top as usize] == Some(ch as u8);
                    let g = layout.has(x, y, ch);
                    inter += (p && g) as u32;
                    union += (p || g) as u32;
                }
            }
            let want = (union > 0).then(|| inter as f64 / union as f64);
            prop_assert_eq!(r.per_channel[ch], want);
        }
    }

    #[test]
    fn small_object_weights_at_least_one(seed: u64, beta in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = BevLayout::empty(LayoutSpec { width: 8, height: 8, resolution: 0.5, channels: 5 });
        for b in layout.bits.iter_mut() {
            *b = rng.random_range(0..32u16);
        }
        let w = small_object_weights(&layout, &[1, 3], beta, 4).unwrap();
        prop_assert_eq!(w.len(), 4);
        prop_assert!(w.iter().all(|&v| (1.0..=1.0 + beta).contains(&v)));
    }
}
