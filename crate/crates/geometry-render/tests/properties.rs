use geometry_render::*;
use occ_core::{GridSpec, Se3Pose, SemanticOccupancyGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FREE: u8 = 5;

fn random_grid(rng: &mut ChaCha8Rng, density: f64) -> SemanticOccupancyGrid {
    let spec = GridSpec::centered([16, 16, 8], 0.4, -1.0);
    let labels = (0..spec.len()).map(|_| if rng.random_bool(density) { rng.random_range(0..5) } else { FREE }).collect();
    SemanticOccupancyGrid { spec, labels }
}

fn random_ray(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    let o = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)];
    let d: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    (o, d.map(|v| v / n))
}

/// Ray/voxel chord `(t0, t1)` from the slab test, clipped to `t ≥ 0`.
fn chord(spec: &GridSpec, v: [usize; 3], o: [f64; 3], d: [f64; 3]) -> (f64, f64) {
    let c = spec.center(v);
    let h = spec.voxel_size / 2.0;
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if (o[a] - c[a]).abs() >= h {
                return (1.0, 0.0);
            }
            continue;
        }
        let (ta, tb) = ((c[a] - h - o[a]) / d[a], (c[a] + h - o[a]) / d[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0, t1)
}

/// Exact oracle: the occupied voxel with the smallest entry parameter among
/// those the ray passes through with positive length.
fn exact_first_hit(g: &SemanticOccupancyGrid, o: [f64; 3], d: [f64; 3], max_range: f64) -> Option<([usize; 3], f64)> {
    let mut best: Option<([usize; 3], f64)> = None;
    for i in 0..g.spec.len() {
        if g.labels[i] == FREE {
            continue;
        }
        let v = g.spec.coords(i);
        let (t0, t1) = chord(&g.spec, v, o, d);
        if t1 > t0 && t0 <= max_range && best.is_none_or(|(_, bt)| t0 < bt) {
            best = Some((v, t0));
        }
    }
    best
}

fn fine_step_first_hit(g: &SemanticOccupancyGrid, o: [f64; 3], d: [f64; 3], max_range: f64) -> Option<[usize; 3]> {
    let step = g.spec.voxel_size / 50.0;
    let mut k = 0u64;
    loop {
        let t = k as f64 * step;
        if t > max_range {
            return None;
        }
        if let Some(v) = g.spec.voxel_of([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]) {
            if g.get(v[0], v[1], v[2]) != FREE {
                return Some(v);
            }
        }
        k += 1;
    }
}

#[test]
fn dda_matches_exact_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let g = random_grid(&mut rng, 0.05);
        for _ in 0..300 {
            let (o, d) = random_ray(&mut rng);
            let got = first_hit(&g, FREE, o, d, 12.0).map(|h| (h.voxel, h.t));
            let want = exact_first_hit(&g, o, d, 12.0);
            assert_eq!(got.map(|h| h.0), want.map(|w| w.0), "ray {o:?} {d:?}");
            if let (Some(a), Some(b)) = (got, want) {
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fine_step_mismatches_are_sub_step_corner_clips() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let step = 0.4 / 50.0;
    for _ in 0..5 {
        let g = random_grid(&mut rng, 0.08);
        for _ in 0..500 {
            let (o, d) = random_ray(&mut rng);
            let dda = first_hit(&g, FREE, o, d, 20.0);
            let fine = fine_step_first_hit(&g, o, d, 20.0);
            if dda.map(|h| h.voxel) != fine {
                let h = dda.expect("sampling cannot find a hit the traversal misses");
                let (t0, t1) = chord(&g.spec, h.voxel, o, d);
                assert!(t1 - t0 < step, "mismatch with chord {}", t1 - t0);
            }
        }
    }
}

#[test]
fn coordinate_buffer_reprojects_within_half_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_grid(&mut rng, 0.1);
    for k in 0..4 {
        let a = k as f64 * 1.3;
        let eye = [25.0 * a.cos(), 25.0 * a.sin(), 8.0];
        let cam = Camera::look_at(eye, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], (12.0, 12.0, 24, 18), CameraRole::F);
        let b = raycast_buffers(&g, FREE, &cam, 100.0);
        assert!(b.hit_mask.iter().any(|&h| h));
        for py in 0..cam.height {
            for px in 0..cam.width {
                let i = py * cam.width + px;
                if b.hit_mask[i] {
                    let p = cam.project(b.coordinate[i]).unwrap();
                    let err = ((p[0] - px as f64 - 0.5).powi(2) + (p[1] - py as f64 - 0.5).powi(2)).sqrt();
                    assert!(err <= 0.5, "pixel ({px}, {py}) reprojects {err} px away");
                }
            }
        }
    }
}

#[test]
fn plucker_constraint_and_translation_invariance() {
    let rig = densify_rig(&CameraRig::surround([0.0, 0.0, 1.5], 1.0, (30.0, 30.0, 32, 24)), 1).unwrap();
    for cam in &rig.cameras {
        for p in plucker_embedding(cam) {
            let md = p[0] * p[3] + p[1] * p[4] + p[2] * p[5];
            assert!(md.abs() <= 1e-12);
        }
        let (px, py) = (16, 12);
        let d = cam.pixel_ray(px, py);
        let before = plucker_embedding(cam)[py * cam.width + px];
        for t in [0.5, 3.0, -2.0] {
            let mut moved = *cam;
            moved.pose.translation += nalgebra::Vector3::from(d) * t;
            let after = plucker_embedding(&moved)[py * cam.width + px];
            for k in 0..6 {
                assert!((after[k] - before[k]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn translation_midpoint_is_exact_average() {
    let base = Camera::look_at([0.0; 3], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], (10.0, 10.0, 8, 8), CameraRole::FL);
    let mut other = base;
    other.role = CameraRole::F;
    other.pose = Se3Pose { translation: nalgebra::Vector3::new(3.0, -1.0, 0.5), ..base.pose };
    let rig = densify_rig(&CameraRig { cameras: vec![base, other] }, 1).unwrap();
    assert_eq!(rig.cameras[1].center(), [1.5, -0.5, 0.25]);
    assert_eq!(rig.cameras[1].pose.rotation, base.pose.rotation);
    assert_eq!(rig.cameras[1].fx, base.fx);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adding_voxels_never_increases_depth(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(&mut rng, 0.03);
        let mut more = g.clone();
        for l in more.labels.iter_mut() {
            if *l == FREE && rng.random_bool(0.05) {
                *l = 2;
            }
        }
        let cam = Camera::look_at([8.0, 3.0, 4.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], (10.0, 10.0, 16, 12), CameraRole::F);
        let a = raycast_buffers(&g, FREE, &cam, 30.0);
        let b = raycast_buffers(&more, FREE, &cam, 30.0);
        for i in 0..a.depth.len() {
            prop_assert!(b.depth[i] <= a.depth[i]);
            if a.hit_mask[i] {
                prop_assert!(b.hit_mask[i]);
            }
        }
    }
}
