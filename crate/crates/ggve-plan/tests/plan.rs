use geometry_render::{CameraRig, CameraRole};
use ggve_plan::modes::DEFAULT_ANCHOR_WEIGHT;
use ggve_plan::{
    anchor_weighted_loss, partition_views, plan_densify, plan_surround, sample_mode, validate_plan, ModeSchedule, PlanCall,
    SurroundPlan, ViewMode,
};
use nn_core::rng::stream;
use nn_core::Tensor;
use proptest::prelude::*;

use CameraRole::*;

fn rig() -> CameraRig {
    CameraRig::surround([0.0, 0.0, 1.5], 0.5, (40.0, 40.0, 32, 24))
}

fn mode(a: u8, t: u8) -> ViewMode {
    ViewMode::new(a, t).unwrap()
}

#[test]
fn surround_plan_is_the_four_call_schedule() {
    let plan = plan_surround(&rig(), false).unwrap();
    let want = [
        (mode(0, 3), vec![], vec![FL, F, FR]),
        (mode(1, 1), vec![FL], vec![BL]),
        (mode(1, 1), vec![FR], vec![BR]),
        (mode(2, 1), vec![BL, BR], vec![B]),
    ];
    assert_eq!(plan.calls.len(), 4);
    for (c, (m, a, t)) in plan.calls.iter().zip(want) {
        assert_eq!((c.mode, &c.anchors, &c.targets), (m, &a, &t));
        assert!(!c.image_anchored);
    }
    validate_plan(&plan, &[], Some(&CameraRole::BASE)).unwrap();
    let tagged = plan_surround(&rig(), true).unwrap();
    assert!(tagged.calls[0].image_anchored);
    assert!(tagged.calls[1..].iter().all(|c| !c.image_anchored));

    let mut partial = rig();
    partial.cameras.retain(|c| c.role != B);
    assert!(plan_surround(&partial, false).is_err());
}

#[test]
fn validator_rejects_broken_plans() {
    let plan = plan_surround(&rig(), false).unwrap();
    let mut swapped = plan.clone();
    swapped.calls.swap(1, 3);
    assert!(validate_plan(&swapped, &[], None).is_err());
    let mut dup = plan.clone();
    dup.calls[2].targets = vec![BL];
    assert!(validate_plan(&dup, &[], None).is_err());
    let mut short = plan.clone();
    short.calls.pop();
    assert!(validate_plan(&short, &[], Some(&CameraRole::BASE)).is_err());
    let bad_mode = SurroundPlan { calls: vec![PlanCall { mode: mode(1, 1), anchors: vec![], targets: vec![F], image_anchored: false }] };
    assert!(validate_plan(&bad_mode, &[], None).is_err());
}

#[test]
fn densify_doubles_twice_in_eighteen_calls() {
    let (r12, p1) = plan_densify(&rig(), 1).unwrap();
    assert_eq!(r12.cameras.len(), 12);
    assert_eq!(p1.calls.len(), 6);
    let base: Vec<CameraRole> = rig().cameras.iter().map(|c| c.role).collect();
    let new12: Vec<CameraRole> = r12.cameras.iter().map(|c| c.role).filter(|r| r.is_virtual()).collect();
    validate_plan(&p1, &base, Some(&new12)).unwrap();
    // First insertion sits between FL and F.
    assert_eq!(p1.calls[0].anchors, [FL, F]);
    assert!(p1.calls.iter().all(|c| c.mode == mode(2, 1)));
    // The last gap wraps from BL back to FL.
    assert_eq!(p1.calls[5].anchors, [BL, FL]);

    let (r24, p2) = plan_densify(&r12, 1).unwrap();
    assert_eq!(r24.cameras.len(), 24);
    assert_eq!(p1.calls.len() + p2.calls.len(), 18);
    let all12: Vec<CameraRole> = r12.cameras.iter().map(|c| c.role).collect();
    let new24: Vec<CameraRole> = r24.cameras.iter().map(|c| c.role).filter(|r| !all12.contains(r)).collect();
    validate_plan(&p2, &all12, Some(&new24)).unwrap();

    let (same, empty) = plan_densify(&rig(), 0).unwrap();
    assert_eq!(same, rig());
    assert!(empty.calls.is_empty());
}

#[test]
fn multi_insertion_gaps_bisect_in_precedence_order() {
    let (dense, plan) = plan_densify(&rig(), 3).unwrap();
    assert_eq!(dense.cameras.len(), 24);
    assert_eq!(plan.calls.len(), 18);
    let base: Vec<CameraRole> = rig().cameras.iter().map(|c| c.role).collect();
    validate_plan(&plan, &base, None).unwrap();
    // Gap FL→F holds V0, V1, V2; the middle one comes first.
    assert_eq!(plan.calls[0].targets, [Virtual(1)]);
    assert_eq!(plan.calls[0].anchors, [FL, F]);
    assert_eq!(plan.calls[1].anchors, [FL, Virtual(1)]);
}

#[test]
fn partition_examples() {
    let mut rng = stream(0, "views");
    let views: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[4, 2], 1.0, &mut rng)).collect();
    let p = partition_views(&views, mode(0, 3)).unwrap();
    assert!(p.anchors.is_empty());
    assert_eq!(p.targets, [0, 1, 2]);
    assert!(p.hint_latents.data().iter().all(|&v| v == 0.0));

    let p = partition_views(&views, mode(2, 1)).unwrap();
    assert_eq!((p.anchors.clone(), p.targets.clone()), (vec![0, 2], vec![1]));
    assert_eq!(p.hint_latents.slice_rows(0, 4), views[0]);
    assert!(p.hint_latents.slice_rows(4, 8).data().iter().all(|&v| v == 0.0));
    assert_eq!(p.hint_latents.slice_rows(8, 12), views[2]);
    assert_eq!(p.anchor_mask, [1., 1., 1., 1., 0., 0., 0., 0., 1., 1., 1., 1.]);

    let p = partition_views(&views[..2], mode(1, 1)).unwrap();
    assert_eq!((p.anchors.clone(), p.targets.clone()), (vec![0], vec![1]));
    assert!(p.hint_latents.slice_rows(4, 8).data().iter().all(|&v| v == 0.0));
    assert!(partition_views(&views, mode(1, 1)).is_err());
    assert!(partition_views(&views, ViewMode { anchors: 1, targets: 2 }).is_err());
}

#[test]
fn anchor_loss_default_weight() {
    let l = anchor_weighted_loss(&[2.0, 4.0], &[true, false], DEFAULT_ANCHOR_WEIGHT).unwrap();
    assert!((l - 2.1).abs() < 1e-15);
}

#[test]
fn mode_sampling_follows_milestones() {
    let single = ModeSchedule { milestones: vec![(0, [0.0, 0.0, 1.0, 0.0, 0.0])] };
    let mut rng = stream(1, "modes");
    for step in [0, 10, 100_000] {
        assert_eq!(sample_mode(&mut rng, step, &single).unwrap(), mode(0, 3));
    }
    let late = ModeSchedule { milestones: vec![(50, [1.0, 0.0, 0.0, 0.0, 0.0]), (60, [0.0, 0.0, 0.0, 0.0, 1.0])] };
    assert_eq!(sample_mode(&mut rng, 3, &late).unwrap(), mode(0, 1));
    assert_eq!(sample_mode(&mut rng, 60, &late).unwrap(), mode(2, 1));

    let sched = ModeSchedule::default();
    for (step, want) in [(0u64, [0.5, 0.2, 0.2, 0.05, 0.05]), (1000, [0.2; 5])] {
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            let m = sample_mode(&mut rng, step, &sched).unwrap();
            counts[ViewMode::ALL.iter().position(|&x| x == m).unwrap()] += 1;
        }
        for (c, w) in counts.iter().zip(want) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.01, "{counts:?}");
        }
    }
    assert!(sample_mode(&mut rng, 0, &ModeSchedule { milestones: vec![] }).is_err());
    assert!(sample_mode(&mut rng, 0, &ModeSchedule { milestones: vec![(0, [0.5; 5])] }).is_err());
}

proptest! {
    #[test]
    fn sampled_modes_stay_in_the_five_mode_set(seed in any::<u64>(), step in 0u64..5000) {
        let mut rng = stream(seed, "prop");
        let m = sample_mode(&mut rng, step, &ModeSchedule::default()).unwrap();
        prop_assert!(ViewMode::ALL.contains(&m));
    }

    #[test]
    fn densify_plans_always_validate(k in 0usize..5) {
        let (dense, plan) = plan_densify(&rig(), k).unwrap();
        let base: Vec<CameraRole> = rig().cameras.iter().map(|c| c.role).collect();
        let new: Vec<CameraRole> = dense.cameras.iter().map(|c| c.role).filter(|r| !base.contains(r)).collect();
        prop_assert_eq!(plan.calls.len(), 6 * k);
        prop_assert!(validate_plan(&plan, &base, Some(&new)).is_ok());
    }
}
