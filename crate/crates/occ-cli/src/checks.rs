//! Invariant checks against independent oracles. Shared by `selftest` and
//! the acceptance suite; each returns its largest observed error.

use std::collections::BTreeMap;

use geometry_render::{densify_rig, first_hit, plucker_embedding, raycast_buffers, Camera, CameraRig, CameraRole};
use ggve_plan::control::random_controlled;
use ggve_plan::{injection_indices, plan_densify, plan_surround, validate_plan, ViewMode};
use losses_metrics::{
    bev_topdown_accumulate, bev_vs_layout_metrics, binary_iou, confusion_accumulate, flow_interpolate, flow_matching_loss,
    focal_loss, kl_standard_normal, lovasz_softmax, miou, softmax, softmax_backward, velocity_target, ConfusionMatrix,
};
use nn_core::adaln::{adaln_zero, adaln_zero_backward, pre_modulate};
use nn_core::attention::{masked_attention, masked_attention_backward, AttentionMask};
use nn_core::gradcheck::{grad_check, rel_error};
use nn_core::ops::{linear, linear_backward};
use nn_core::rng::{indexed, stream};
use nn_core::rope::{rope2d, rope2d_backward};
use nn_core::{Module, SwiGlu, Tensor};
use occ_core::panoptic::{is_thing, panoptic_decode, panoptic_encode, FREE_CLASS, FREE_LABEL, MAX_INSTANCE};
use occ_core::{BevLayout, GridSpec, LabelSchema, LayoutSpec, OccError, SemanticOccupancyGrid};
use rand::Rng;
use serde::Serialize;
use stoccdit::config::DitConfig;
use stoccdit::dit::{DitInput, StOccDit, StreamInput};
use stoccdit::mask::{build_temporal_mask, interleaved_tags, StreamKind, StreamTag};
use stoccdit::sample::{cfg_combine, euler_integrate};
use voxel_pipeline::{resample_occupancy, voxelize_majority, EgoShift, LabeledPointCloud};

use crate::Result;

/// Outcome of one invariant. Exact checks count mismatches in `max_err`
/// and use a zero tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn within(name: &str, max_err: f64, tol: f64) -> Self {
        Self { name: name.into(), max_err, tol, passed: max_err <= tol, detail: String::new() }
    }

    pub fn exact(name: &str, mismatches: usize) -> Self {
        Self::within(name, mismatches as f64, 0.0)
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("{verdict} {:<34} max_err {:.3e} (tol {:.0e})", self.name, self.max_err, self.tol);
        if !self.detail.is_empty() {
            s.push_str(&format!("  {}", self.detail));
        }
        s
    }
}

const EPS: f64 = 1e-6;
const EPS_DEEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const TRANSFORMER_GRAD_TOL: f64 = 1e-4;

// Panoptic codec.

/// All 17 × 1000 `(class, instance)` pairs: valid pairs must round-trip
/// exactly, stuff and free classes with an instance must be rejected.
pub fn codec_round_trip() -> Result<Check> {
    let mut bad = 0usize;
    let mut valid = 0usize;
    for class in 1..=FREE_CLASS {
        for instance in 0..=MAX_INSTANCE {
            let ok = if is_thing(class) || instance == 0 {
                valid += 1;
                let label = panoptic_encode(class, instance)?;
                label == class * 1000 + instance && panoptic_decode(label)? == (class, instance)
            } else {
                matches!(panoptic_encode(class, instance), Err(OccError::StuffWithInstance { .. }))
                    && panoptic_decode(class * 1000 + instance).is_err()
            };
            bad += usize::from(!ok);
        }
    }
    let total = FREE_CLASS as usize * (MAX_INSTANCE as usize + 1);
    Ok(Check::exact("codec round trip", bad).detail(format!("{total} pairs, {valid} valid")))
}

// Voxelization.

const CLOUD_LABELS: [u32; 7] = [1001, 1002, 2005, 4001, 11000, 15000, 16000];

fn random_cloud(rng: &mut impl Rng, n: usize, extent: f64) -> Result<LabeledPointCloud> {
    let points = (0..n).map(|_| [0; 3].map(|_| rng.random_range(-extent..extent))).collect();
    // A narrow label pool makes count ties common.
    let pool = rng.random_range(2..=CLOUD_LABELS.len());
    let labels = (0..n).map(|_| CLOUD_LABELS[rng.random_range(0..pool)]).collect();
    Ok(LabeledPointCloud::new(points, labels)?)
}

/// Per-voxel frequency counts; ties go to the smallest label.
fn voxelize_oracle(cloud: &LabeledPointCloud, spec: &GridSpec) -> Vec<u32> {
    let mut counts: BTreeMap<usize, BTreeMap<u32, usize>> = BTreeMap::new();
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        let [nx, ny, nz] = spec.dims;
        let f = [0, 1, 2].map(|a| ((p[a] - spec.origin[a]) / spec.voxel_size).floor());
        let inside = f.iter().zip([nx, ny, nz]).all(|(&v, n)| v >= 0.0 && v < n as f64);
        if inside {
            let [x, y, z] = f.map(|v| v as usize);
            *counts.entry((x * ny + y) * nz + z).or_default().entry(l).or_default() += 1;
        }
    }
    let mut out = vec![FREE_LABEL; spec.len()];
    for (voxel, c) in counts {
        let best = c.values().copied().max().unwrap_or(0);
        // BTreeMap iterates labels in ascending order.
        out[voxel] = c.iter().find(|&(_, &n)| n == best).map(|(&l, _)| l).unwrap_or(FREE_LABEL);
    }
    out
}

/// `clouds` random clouds of up to `max_points` points against the count oracle.
pub fn voxelize_oracle_check(seed: u64, clouds: usize, max_points: usize) -> Result<Check> {
    let spec = GridSpec::centered([10, 10, 5], 0.5, -1.25);
    let mut mismatched_voxels = 0;
    let mut points = 0;
    for i in 0..clouds {
        let mut rng = indexed(seed, "voxelize-cloud", i as u64);
        let n = if i == 0 { max_points } else { rng.random_range(0..=max_points) };
        points += n;
        let cloud = random_cloud(&mut rng, n, 3.0)?;
        let got = voxelize_majority(&cloud, &spec)?;
        mismatched_voxels += got.labels.iter().zip(voxelize_oracle(&cloud, &spec)).filter(|(a, b)| **a != *b).count();
    }
    Ok(Check::exact("voxelize vs count oracle", mismatched_voxels).detail(format!("{clouds} clouds, {points} points")))
}

// Gradient suite.

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_vec(shape, v.to_vec()).expect("shape matches data")
}

fn flat_params(m: &dyn Module) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit("", &mut |_, p| out.extend_from_slice(p.value.data()));
    out
}

fn flat_grads(m: &dyn Module) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit("", &mut |_, p| out.extend_from_slice(p.grad.data()));
    out
}

fn set_params(m: &mut dyn Module, v: &[f64]) {
    let mut i = 0;
    m.visit_mut("", &mut |_, p| {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&v[i..i + n]);
        i += n;
    });
}

fn randomize(m: &mut dyn Module, std: f64, rng: &mut impl Rng) {
    m.visit_mut("", &mut |_, p| p.value = Tensor::randn(p.value.shape(), std, rng));
}

fn randn(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    Tensor::randn(&[n], std, rng).into_data()
}

fn linear_instance(rng: &mut impl Rng) -> f64 {
    let (n, i, o) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
    let x = Tensor::randn(&[n, i], 1.0, rng);
    let w = Tensor::randn(&[i, o], 1.0, rng);
    let b = Tensor::randn(&[o], 1.0, rng);
    let r = Tensor::randn(&[n, o], 1.0, rng);
    let (dx, dw, db) = linear_backward(&x, &w, &r);
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| linear(x, w, b).expect("shapes").dot(&r);
    let ex = grad_check(|v| loss(&t(&[n, i], v), &w, &b), x.data(), dx.data(), EPS);
    let ew = grad_check(|v| loss(&x, &t(&[i, o], v), &b), w.data(), dw.data(), EPS);
    let eb = grad_check(|v| loss(&x, &w, &t(&[o], v)), b.data(), db.data(), EPS);
    ex.max(ew).max(eb)
}

fn attention_instance(rng: &mut impl Rng) -> f64 {
    let (sq, sk) = (rng.random_range(1..6), rng.random_range(1..6));
    let (heads, hd) = (rng.random_range(1..3), rng.random_range(1..5));
    let d = heads * hd;
    let q = Tensor::randn(&[sq, d], 1.0, rng);
    let k = Tensor::randn(&[sk, d], 1.0, rng);
    let v = Tensor::randn(&[sk, d], 1.0, rng);
    let r = Tensor::randn(&[sq, d], 1.0, rng);
    let allowed: Vec<bool> = (0..sq * sk).map(|c| c % sk == 0 || rng.random_bool(0.6)).collect();
    let mask = AttentionMask::new(sq, sk, allowed).expect("mask shape");
    let (_, cache) = masked_attention(&q, &k, &v, Some(&mask), heads).expect("shapes");
    let (dq, dk, dv) = masked_attention_backward(&q, &k, &v, &cache, &r);
    let loss = |q: &Tensor, k: &Tensor, v: &Tensor| masked_attention(q, k, v, Some(&mask), heads).expect("shapes").0.dot(&r);
    let eq = grad_check(|x| loss(&t(&[sq, d], x), &k, &v), q.data(), dq.data(), EPS);
    let ek = grad_check(|x| loss(&q, &t(&[sk, d], x), &v), k.data(), dk.data(), EPS);
    let ev = grad_check(|x| loss(&q, &k, &t(&[sk, d], x)), v.data(), dv.data(), EPS);
    eq.max(ek).max(ev)
}

fn rope_instance(rng: &mut impl Rng) -> f64 {
    let (heads, hd) = (rng.random_range(1..3), 4 * rng.random_range(1..3));
    let tokens = rng.random_range(1..7);
    let d = heads * hd;
    let pos: Vec<[f64; 2]> = (0..tokens).map(|_| [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)]).collect();
    let x = Tensor::randn(&[tokens, d], 1.0, rng);
    let r = Tensor::randn(&[tokens, d], 1.0, rng);
    let g = rope2d_backward(&r, &pos, heads).expect("shapes");
    grad_check(|v| rope2d(&t(&[tokens, d], v), &pos, heads).expect("shapes").dot(&r), x.data(), g.data(), EPS)
}

fn adaln_instance(rng: &mut impl Rng) -> f64 {
    let (n, d) = (rng.random_range(1..5), rng.random_range(2..6));
    let x = Tensor::randn(&[n, d], 1.0, rng);
    let mods: Vec<Vec<f64>> = (0..3).map(|_| randn(rng, d, 0.5)).collect();
    let r = Tensor::randn(&[n, d], 1.0, rng);
    let (_, ln, fx) = adaln_zero(&x, &mods[0], &mods[1], &mods[2], |h| h.map(f64::tanh));
    let (h, _) = pre_modulate(&x, &mods[0], &mods[1]);
    let (dx, dshift, dscale, dgate) = adaln_zero_backward(&ln, &fx, &mods[1], &mods[2], &r, |dfx| {
        let mut out = dfx.clone();
        for (o, hv) in out.data_mut().iter_mut().zip(h.data()) {
            *o *= 1.0 - hv.tanh().powi(2);
        }
        out
    });
    let loss = |x: &Tensor, m: &[Vec<f64>]| adaln_zero(x, &m[0], &m[1], &m[2], |h| h.map(f64::tanh)).0.dot(&r);
    let mut worst = grad_check(|v| loss(&t(&[n, d], v), &mods), x.data(), dx.data(), EPS);
    for (i, g) in [dshift, dscale, dgate].iter().enumerate() {
        let e = grad_check(
            |v| {
                let mut m = mods.clone();
                m[i] = v.to_vec();
                loss(&x, &m)
            },
            &mods[i],
            g,
            EPS,
        );
        worst = worst.max(e);
    }
    worst
}

fn swiglu_instance(rng: &mut impl Rng) -> f64 {
    let (n, d, hidden) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..7));
    let mut f = SwiGlu::new(d, hidden, rng);
    randomize(&mut f, 0.5, rng);
    let x = Tensor::randn(&[n, d], 1.0, rng);
    let r = Tensor::randn(&[n, d], 1.0, rng);
    let (_, cache) = f.forward(&x);
    f.zero_grad();
    let dx = f.backward(&cache, &r);
    let ex = grad_check(|v| f.forward(&t(&[n, d], v)).0.dot(&r), x.data(), dx.data(), EPS);
    let (p0, g) = (flat_params(&f), flat_grads(&f));
    let mut probe = f.clone();
    let ep = grad_check(
        |v| {
            set_params(&mut probe, v);
            probe.forward(&x).0.dot(&r)
        },
        &p0,
        &g,
        EPS,
    );
    ex.max(ep)
}

fn focal_instance(rng: &mut impl Rng) -> f64 {
    let (n, c) = (rng.random_range(1..9), rng.random_range(2..6));
    let logits = randn(rng, n * c, 1.5);
    let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let gamma = rng.random_range(0.0..3.0);
    let alpha = rng.random_range(0.1..1.0);
    let (_, g) = focal_loss(&logits, &targets, c, gamma, alpha, Some(&weights)).expect("shapes");
    grad_check(|x| focal_loss(x, &targets, c, gamma, alpha, Some(&weights)).expect("shapes").0, &logits, &g, EPS)
}

fn lovasz_instance(rng: &mut impl Rng) -> f64 {
    let (n, c) = (rng.random_range(1..9), rng.random_range(2..5));
    let logits = randn(rng, n * c, 1.0);
    let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
    let p = softmax(&logits, c);
    let (_, dp) = lovasz_softmax(&p, &targets, c).expect("shapes");
    let dz = softmax_backward(&p, &dp, c);
    grad_check(|z| lovasz_softmax(&softmax(z, c), &targets, c).expect("shapes").0, &logits, &dz, EPS)
}

fn kl_instance(rng: &mut impl Rng) -> f64 {
    let n = rng.random_range(1..10);
    let mu = randn(rng, n, 1.0);
    let lv = randn(rng, n, 0.5);
    let (_, dmu, dlv) = kl_standard_normal(&mu, &lv).expect("shapes");
    let e1 = grad_check(|x| kl_standard_normal(x, &lv).expect("shapes").0, &mu, &dmu, EPS);
    let e2 = grad_check(|x| kl_standard_normal(&mu, x).expect("shapes").0, &lv, &dlv, EPS);
    e1.max(e2)
}

fn flow_instance(rng: &mut impl Rng) -> f64 {
    let (tokens, c) = (rng.random_range(1..6), rng.random_range(1..4));
    let pred = randn(rng, tokens * c, 1.0);
    let target = randn(rng, tokens * c, 1.0);
    let w: Vec<f64> = (0..tokens).map(|_| rng.random_range(0.0..3.0)).collect();
    let (_, g) = flow_matching_loss(&pred, &target, &w).expect("shapes");
    grad_check(|x| flow_matching_loss(x, &target, &w).expect("shapes").0, &pred, &g, EPS)
}

/// The tiny two-layer DiT used by the transformer and mask checks.
pub fn tiny_dit_config(frames: usize) -> DitConfig {
    DitConfig {
        depth: 2,
        hidden: 32,
        heads: 2,
        ffn_mult: 2,
        frames_per_clip: frames,
        token_side: 4,
        latent_channels: 3,
        layout_channels: 5,
        layout_patch: 2,
        bev_embed_dim: 8,
        freq_dim: 16,
        ..DitConfig::toy()
    }
}

pub fn random_layout(rng: &mut impl Rng, side: usize, channels: usize) -> BevLayout {
    let mut l = BevLayout::empty(LayoutSpec { width: side, height: side, resolution: 0.4, channels });
    for b in l.bits.iter_mut() {
        *b = rng.random_range(0..1u16 << channels);
    }
    l
}

fn dual_streams(cfg: &DitConfig, rng: &mut impl Rng) -> Vec<StreamInput> {
    (0..cfg.frames_per_clip)
        .flat_map(|f| {
            let c = StreamInput::clean(f, Tensor::randn(&[cfg.tokens(), cfg.latent_channels], 1.0, rng));
            let n = StreamInput::noisy(f, Tensor::randn(&[cfg.tokens(), cfg.latent_channels], 1.0, rng), rng.random_range(0.05..0.95));
            [c, n]
        })
        .collect()
}

/// Full toy transformer in dual-stream mode with the last frame
/// unconditional; three entries of every parameter tensor are probed.
fn transformer_instance(rng: &mut impl Rng) -> Result<f64> {
    let cfg = tiny_dit_config(2);
    let mut model = StOccDit::new(cfg.clone(), rng)?;
    randomize(&mut model, 0.3, rng);
    let layout = random_layout(rng, 8, 5);
    let streams = dual_streams(&cfg, rng);
    let input = DitInput { streams, layouts: vec![Some(&layout), None], temporal: true };
    let probes: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[cfg.tokens(), cfg.latent_channels], 1.0, rng)).collect();
    let loss = |m: &StOccDit| -> f64 {
        let (out, _) = m.forward(&input).expect("valid input");
        out.iter().zip(&probes).map(|(o, p)| o.dot(p)).sum()
    };
    let (_, cache) = model.forward(&input)?;
    model.zero_grad();
    model.backward(&cache, &probes);
    let mut entries: Vec<(String, usize, f64, f64)> = Vec::new();
    model.visit("", &mut |name, p| {
        let len = p.value.len();
        for k in 0..len.min(3) {
            let i = rng.random_range(0..len);
            let i = if k == 0 { i } else { (i + k * 7919) % len };
            entries.push((name.to_string(), i, p.value.data()[i], p.grad.data()[i]));
        }
    });
    let mut worst: f64 = 0.0;
    for (name, i, x0, analytic) in entries {
        let mut probe = model.clone();
        let mut eval = |x: f64| {
            probe.visit_mut("", &mut |n, p| {
                if n == name {
                    p.value.data_mut()[i] = x;
                }
            });
            loss(&probe)
        };
        let numeric = (eval(x0 + EPS_DEEP) - eval(x0 - EPS_DEEP)) / (2.0 * EPS_DEEP);
        worst = worst.max(rel_error(analytic, numeric));
    }
    Ok(worst)
}

/// Every layer and loss on `instances` random instances each.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<Check>> {
    type Case = fn(&mut nn_core::rng::StreamRng) -> f64;
    let cases: [(&str, Case); 9] = [
        ("grad linear", linear_instance),
        ("grad masked attention", attention_instance),
        ("grad rope-2d", rope_instance),
        ("grad adaln-zero", adaln_instance),
        ("grad swiglu", swiglu_instance),
        ("grad focal", focal_instance),
        ("grad lovasz-softmax", lovasz_instance),
        ("grad kl", kl_instance),
        ("grad flow matching", flow_instance),
    ];
    let mut out = Vec::new();
    for (name, case) in cases {
        let worst = (0..instances).map(|i| case(&mut indexed(seed, name, i as u64))).fold(0.0, f64::max);
        out.push(Check::within(name, worst, GRAD_TOL).detail(format!("{instances} instances")));
    }
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        worst = worst.max(transformer_instance(&mut indexed(seed, "grad transformer", i as u64))?);
    }
    out.push(Check::within("grad toy transformer (L=2)", worst, TRANSFORMER_GRAD_TOL).detail(format!("{instances} instances")));
    Ok(out)
}

// Temporal mask.

fn mask_rule(q: StreamTag, k: StreamTag) -> bool {
    match (q.kind, k.kind) {
        (StreamKind::Clean, StreamKind::Clean) => k.frame <= q.frame,
        (StreamKind::Clean, StreamKind::Noisy) => false,
        (StreamKind::Noisy, StreamKind::Clean) => k.frame < q.frame,
        (StreamKind::Noisy, StreamKind::Noisy) => k.frame == q.frame,
    }
}

/// Rule enumeration for four frames and the perturbation probe: noisy frame
/// `t` must not change when clean frames `≥ t`, other noisy frames and
/// later layouts change.
pub fn mask_checks(seed: u64) -> Result<Vec<Check>> {
    let tags = interleaved_tags(4);
    let mask = build_temporal_mask(4);
    let mut bad = 0;
    for (i, &q) in tags.iter().enumerate() {
        for (j, &k) in tags.iter().enumerate() {
            bad += usize::from(mask.get(i, j) != mask_rule(q, k));
        }
    }
    let rule = Check::exact("temporal mask vs rule", bad).detail(format!("{} pairs", tags.len() * tags.len()));

    let cfg = tiny_dit_config(4);
    let mut rng = stream(seed, "mask-probe");
    let mut model = StOccDit::new(cfg.clone(), &mut rng)?;
    randomize(&mut model, 0.3, &mut rng);
    let layouts: Vec<BevLayout> = (0..4).map(|_| random_layout(&mut rng, 8, 5)).collect();
    let streams = dual_streams(&cfg, &mut rng);
    let run = |streams: &[StreamInput], layouts: &[BevLayout]| -> Result<Vec<Tensor>> {
        let input = DitInput { streams: streams.to_vec(), layouts: layouts.iter().map(Some).collect(), temporal: true };
        Ok(model.forward(&input)?.0)
    };
    let base = run(&streams, &layouts)?;
    let mut worst: f64 = 0.0;
    let mut reached = true;
    for t in 0..4 {
        for trial in 0..3 {
            let mut s = streams.clone();
            let mut l = layouts.clone();
            for st in s.iter_mut() {
                let affected = match st.tag.kind {
                    StreamKind::Clean => st.tag.frame >= t,
                    StreamKind::Noisy => st.tag.frame != t,
                };
                if affected {
                    st.latent = Tensor::randn(st.latent.shape(), 1.0, &mut rng);
                    st.tau = rng.random_range(0.05..0.95);
                }
            }
            for layout in l.iter_mut().skip(t + 1) {
                *layout = random_layout(&mut rng, 8, 5);
            }
            let out = run(&s, &l)?;
            worst = worst.max(out[t].max_abs_diff(&base[t]));
            if t < 3 && trial == 0 {
                reached &= out[t + 1].max_abs_diff(&base[t + 1]) > 1e-6;
            }
        }
    }
    let mut probe = Check::within("mask perturbation probe", worst, 1e-9);
    if !reached {
        probe.passed = false;
        probe.detail = "perturbation did not reach later frames".into();
    }
    Ok(vec![rule, probe])
}

// Flow and Euler identities.

pub fn euler_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = stream(seed, "euler");
    let z = randn(&mut rng, 48, 1.0);
    let eps = randn(&mut rng, 48, 1.0);
    let ends = usize::from(flow_interpolate(&z, &eps, 0.0) != z) + usize::from(flow_interpolate(&z, &eps, 1.0) != eps);
    let endpoints = Check::exact("flow endpoints", ends);

    let v = t(&[16, 3], &velocity_target(&z, &eps));
    let target = t(&[16, 3], &z);
    let mut worst: f64 = 0.0;
    for steps in [1, 5, 30] {
        let got = euler_integrate(t(&[16, 3], &eps), steps, |_, _| Ok(v.clone()))?;
        worst = worst.max(got.max_abs_diff(&target));
    }
    let oracle = Check::within("euler constant-field oracle", worst, 1e-9).detail("steps 1, 5, 30");

    let c = Tensor::randn(&[16, 3], 1.0, &mut rng);
    let u = Tensor::randn(&[16, 3], 1.0, &mut rng);
    let err = cfg_combine(&c, &u, 0.0).max_abs_diff(&u).max(cfg_combine(&c, &u, 1.0).max_abs_diff(&c));
    let cfg = Check::within("cfg identities", err, 1e-12).detail("w = 0, 1");
    Ok(vec![endpoints, oracle, cfg])
}

// Control branch.

/// Deliberate defects for the mutation probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlFault {
    /// Hint scale 2 with zero output projections; must still pass.
    HintScale,
    /// Nonzero output projections; must fail the identity check.
    LiveProjection,
}

/// Zero-initialized controlled backbone vs the plain backbone on `trials`
/// random inputs, and the reference injection set for depths (40, 8).
pub fn control_checks(seed: u64, trials: usize, fault: Option<ControlFault>) -> Result<Vec<Check>> {
    let mut rng = stream(seed, "control");
    let tokens = 6;
    let (mut m, d) = random_controlled((6, 2), 1.0, &mut rng)?;
    match fault {
        Some(ControlFault::HintScale) => m.schedule.scale = 2.0,
        Some(ControlFault::LiveProjection) => {
            for p in &mut m.control.after_proj {
                p.weight.value = Tensor::randn(p.weight.value.shape(), 0.4, &mut rng);
            }
        }
        None => {}
    }
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = Tensor::randn(&[tokens, d.dim], 1.0, &mut rng);
        let cond: Vec<f64> = (0..d.cond_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hint = ggve_plan::control::random_hint(&d, tokens, &mut rng);
        let plain = m.backbone.forward(&x, &cond, None, None)?;
        worst = worst.max(m.forward(&x, &hint, &cond, None, None)?.0.max_abs_diff(&plain));
    }
    let identity = Check::within("control zero-init identity", worst, 1e-12).detail(format!("{trials} inputs"));
    let idx = injection_indices(40, 8)?;
    let want = [0, 5, 10, 15, 20, 25, 30, 35];
    let bad = idx.len().abs_diff(want.len()) + idx.iter().zip(want).filter(|(a, b)| **a != *b).count();
    Ok(vec![identity, Check::exact("injection indices (40, 8)", bad).detail(format!("{idx:?}"))])
}

// Planning.

pub fn plan_checks() -> Result<Vec<Check>> {
    use CameraRole::*;
    let rig = CameraRig::surround([0.0, 0.0, 1.5], 0.5, (32.0, 32.0, 64, 48));
    let plan = plan_surround(&rig, false)?;
    let want: [((u8, u8), Vec<CameraRole>, Vec<CameraRole>); 4] = [
        ((0, 3), vec![], vec![FL, F, FR]),
        ((1, 1), vec![FL], vec![BL]),
        ((1, 1), vec![FR], vec![BR]),
        ((2, 1), vec![BL, BR], vec![B]),
    ];
    let mut bad = plan.calls.len().abs_diff(want.len());
    for (c, (mode, anchors, targets)) in plan.calls.iter().zip(&want) {
        let same = c.mode == ViewMode::new(mode.0, mode.1)? && &c.anchors == anchors && &c.targets == targets;
        bad += usize::from(!same);
    }
    let surround = Check::exact("surround plan schedule", bad);

    let mut problems = Vec::new();
    let mut current = rig;
    for want_len in [12, 24] {
        let (dense, plan) = plan_densify(&current, 1)?;
        if dense.cameras.len() != want_len {
            problems.push(format!("{} cameras, want {want_len}", dense.cameras.len()));
        }
        let external: Vec<CameraRole> = current.cameras.iter().map(|c| c.role).collect();
        let new: Vec<CameraRole> = dense.cameras.iter().map(|c| c.role).filter(|r| !external.contains(r)).collect();
        if let Err(e) = validate_plan(&plan, &external, Some(&new)) {
            problems.push(e.to_string());
        }
        current = dense;
    }
    let densify = Check::exact("densify 6 -> 12 -> 24", problems.len()).detail(problems.join("; "));
    Ok(vec![surround, densify])
}

// Raycasting.

const RAY_FREE: u8 = 5;

fn random_occupancy(rng: &mut impl Rng, spec: GridSpec, density: f64, free: u8) -> SemanticOccupancyGrid {
    let labels = (0..spec.len()).map(|_| if rng.random_bool(density) { rng.random_range(0..free) } else { free }).collect();
    SemanticOccupancyGrid { spec, labels }
}

/// Dense sampling along the ray at a fiftieth of a voxel.
fn fine_step_first_hit(g: &SemanticOccupancyGrid, o: [f64; 3], d: [f64; 3], max_range: f64) -> Option<[usize; 3]> {
    let step = g.spec.voxel_size / 50.0;
    (0..)
        .map(|k| k as f64 * step)
        .take_while(|&t| t <= max_range)
        .filter_map(|t| g.spec.voxel_of([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]))
        .find(|v| g.get(v[0], v[1], v[2]) != RAY_FREE)
}

/// Ray/voxel chord `(t0, t1)` from the slab test, clipped to `t ≥ 0`. Empty
/// when `t1 <= t0`.
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

fn chord_length(spec: &GridSpec, v: [usize; 3], o: [f64; 3], d: [f64; 3]) -> f64 {
    let (t0, t1) = chord(spec, v, o, d);
    (t1 - t0).max(0.0)
}

/// The occupied voxel with the smallest entry parameter among those the ray
/// crosses with positive length.
fn exact_first_hit(g: &SemanticOccupancyGrid, o: [f64; 3], d: [f64; 3], max_range: f64) -> Option<[usize; 3]> {
    let mut best: Option<([usize; 3], f64)> = None;
    for (i, &l) in g.labels.iter().enumerate() {
        if l == RAY_FREE {
            continue;
        }
        let v = g.spec.coords(i);
        let (t0, t1) = chord(&g.spec, v, o, d);
        if t1 > t0 && t0 <= max_range && best.is_none_or(|(_, bt)| t0 < bt) {
            best = Some((v, t0));
        }
    }
    best.map(|b| b.0)
}

/// Counts behind the raycast checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RaycastStats {
    pub rays: usize,
    pub hits: usize,
    /// DDA first hit differs from the fine-step oracle.
    pub fine_step_mismatches: usize,
    /// Of those, rays whose DDA voxel is crossed along a chord shorter than
    /// the oracle's step.
    pub corner_clips: usize,
    /// Longest chord among the fine-step mismatches.
    pub max_mismatch_chord: f64,
    pub fine_step: f64,
    /// DDA first hit differs from the analytic slab oracle.
    pub exact_mismatches: usize,
}

/// First hits against the fine-step and analytic oracles over
/// `grids × rays`, coordinate buffer reprojection and the Plücker constraint.
pub fn raycast_checks(seed: u64, grids: usize, rays: usize) -> Result<(Vec<Check>, RaycastStats)> {
    let spec = GridSpec::centered([16, 16, 8], 0.4, -1.6);
    let max_range = 20.0;
    let mut st = RaycastStats { rays: grids * rays, fine_step: spec.voxel_size / 50.0, ..RaycastStats::default() };
    let mut reproj: f64 = 0.0;
    for gi in 0..grids {
        let mut rng = indexed(seed, "raycast-grid", gi as u64);
        let g = random_occupancy(&mut rng, spec, 0.06, RAY_FREE);
        for _ in 0..rays {
            let o = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)];
            let d: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let d = d.map(|v| v / n);
            let dda = first_hit(&g, RAY_FREE, o, d, max_range).map(|h| h.voxel);
            st.hits += usize::from(dda.is_some());
            if dda != exact_first_hit(&g, o, d, max_range) {
                st.exact_mismatches += 1;
            }
            if dda != fine_step_first_hit(&g, o, d, max_range) {
                st.fine_step_mismatches += 1;
                if let Some(v) = dda {
                    let c = chord_length(&spec, v, o, d);
                    st.max_mismatch_chord = st.max_mismatch_chord.max(c);
                    st.corner_clips += usize::from(c < st.fine_step);
                }
            }
        }
        let a = gi as f64 * 0.9;
        let eye = [22.0 * a.cos(), 22.0 * a.sin(), 7.0];
        let cam = Camera::look_at(eye, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], (14.0, 14.0, 28, 20), CameraRole::F);
        let b = raycast_buffers(&g, RAY_FREE, &cam, 100.0);
        for py in 0..cam.height {
            for px in 0..cam.width {
                let i = py * cam.width + px;
                if b.hit_mask[i] {
                    let err = match cam.project(b.coordinate[i]) {
                        Some(p) => ((p[0] - px as f64 - 0.5).powi(2) + (p[1] - py as f64 - 0.5).powi(2)).sqrt(),
                        None => f64::INFINITY,
                    };
                    reproj = reproj.max(err);
                }
            }
        }
    }
    let fine = Check::exact("dda vs fine-step first hit", st.fine_step_mismatches).detail(format!(
        "{} rays, {} hits, {} of {} mismatches are corner clips (longest chord {:.1e} m, step {:.0e} m)",
        st.rays, st.hits, st.corner_clips, st.fine_step_mismatches, st.max_mismatch_chord, st.fine_step
    ));
    let exact = Check::exact("dda vs analytic slab first hit", st.exact_mismatches);
    let reprojection = Check::within("coordinate reprojection (px)", reproj, 0.5);

    let rig = densify_rig(&CameraRig::surround([0.0, 0.0, 1.5], 1.0, (30.0, 30.0, 32, 24)), 1)?;
    let mut md: f64 = 0.0;
    for cam in &rig.cameras {
        for p in plucker_embedding(cam) {
            md = md.max((p[0] * p[3] + p[1] * p[4] + p[2] * p[5]).abs());
        }
    }
    Ok((vec![fine, exact, reprojection, Check::within("plucker m.d", md, 1e-12)], st))
}

// Metrics.

/// Confusion, mIoU, IoU, top-down and layout metrics on random 8×8×4 pairs
/// against per-voxel and per-cell brute force.
pub fn metrics_checks(seed: u64, pairs: usize) -> Result<Vec<Check>> {
    let schema = LabelSchema::toy();
    let c = schema.num_classes();
    let free = schema.free_class;
    let spec = GridSpec::centered([8, 8, 4], 0.4, 0.0);
    let [nx, ny, nz] = spec.dims;
    let mut bad = 0usize;
    let mut worst: f64 = 0.0;
    let mut self_worst: f64 = 0.0;
    let mut diff = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
        (None, None) => {}
        _ => worst = f64::INFINITY,
    };
    for i in 0..pairs {
        let mut rng = indexed(seed, "metrics-pair", i as u64);
        let p_free = rng.random_range(0.2..0.9);
        let gt = random_occupancy(&mut rng, spec, 1.0 - p_free, free);
        let pred = random_occupancy(&mut rng, spec, 1.0 - p_free, free);

        let mut oracle = vec![vec![0u64; c]; c];
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    oracle[gt.get(x, y, z) as usize][pred.get(x, y, z) as usize] += 1;
                }
            }
        }
        let mut m = ConfusionMatrix::new(c);
        confusion_accumulate(&pred, &gt, &mut m)?;
        bad += (0..c).flat_map(|g| (0..c).map(move |p| (g, p))).filter(|&(g, p)| m.get(g, p) != oracle[g][p]).count();

        let class_iou = |k: usize| {
            let tp = oracle[k][k];
            let union: u64 = (0..c).map(|j| oracle[k][j] + oracle[j][k]).sum::<u64>() - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        };
        let ious: Vec<f64> = (0..c).filter(|&k| k != free as usize).filter_map(class_iou).collect();
        diff(miou(&m, &schema), (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64));
        let (mut tp, mut union) = (0u64, 0u64);
        for g in 0..c {
            for p in 0..c {
                let (go, po) = (g != free as usize, p != free as usize);
                tp += if go && po { oracle[g][p] } else { 0 };
                union += if go || po { oracle[g][p] } else { 0 };
            }
        }
        diff(binary_iou(&m, &schema), (union > 0).then(|| tp as f64 / union as f64));

        // Top-down: lowest non-free voxel per column.
        let top = |g: &SemanticOccupancyGrid, x: usize, y: usize| (0..nz).map(|z| g.get(x, y, z)).find(|&l| l != free).unwrap_or(free);
        let mut bev = ConfusionMatrix::new(c);
        bev_topdown_accumulate(&pred, &gt, &schema, &mut bev)?;
        let mut bev_oracle = vec![vec![0u64; c]; c];
        for x in 0..nx {
            for y in 0..ny {
                bev_oracle[top(&gt, x, y) as usize][top(&pred, x, y) as usize] += 1;
            }
        }
        bad += (0..c).flat_map(|g| (0..c).map(move |p| (g, p))).filter(|&(g, p)| bev.get(g, p) != bev_oracle[g][p]).count();

        let channels = schema.layout_channels as usize;
        let layout = random_layout(&mut rng, nx, channels);
        let mut layout = layout;
        layout.spec = LayoutSpec::for_grid(&spec, channels);
        let report = bev_vs_layout_metrics(&pred, &layout, &schema)?;
        for ch in 0..channels {
            let (mut inter, mut uni) = (0u64, 0u64);
            for x in 0..nx {
                for y in 0..ny {
                    let p = schema.layout_channel_map[top(&pred, x, y) as usize] == Some(ch as u8);
                    let g = layout.bits[x * ny + y] >> ch & 1 == 1;
                    inter += u64::from(p && g);
                    uni += u64::from(p || g);
                }
            }
            diff(report.per_channel[ch], (uni > 0).then(|| inter as f64 / uni as f64));
        }

        let mut same = ConfusionMatrix::new(c);
        confusion_accumulate(&gt, &gt, &mut same)?;
        self_worst = self_worst.max(miou(&same, &schema).map_or(f64::INFINITY, |v| (1.0 - v).abs()));
    }
    Ok(vec![
        Check::exact("confusion and top-down counts", bad).detail(format!("{pairs} pairs")),
        Check::within("miou/iou/layout vs brute force", worst, 0.0),
        Check::within("self-comparison miou = 1", self_worst, 0.0),
    ])
}

// Trajectory editing.

/// Identity resampling and a +2 m lateral shift at 0.4 m voxels against the
/// five-voxel index shift.
pub fn resample_checks(seed: u64) -> Result<Vec<Check>> {
    let schema = LabelSchema::toy();
    let spec = GridSpec::centered([32, 32, 8], 0.4, 0.0);
    let mut rng = stream(seed, "resample");
    let g = random_occupancy(&mut rng, spec, 0.3, schema.free_class);
    let same = resample_occupancy(&g, &EgoShift::translation([0.0; 3]), schema.free_class);
    let identity = Check::exact("resample identity", same.labels.iter().zip(&g.labels).filter(|(a, b)| a != b).count());
    let mut bad = 0;
    for (shift, k) in [(2.0, 5i64), (-2.0, -5), (4.0, 10), (-4.0, -10)] {
        let moved = resample_occupancy(&g, &EgoShift::translation([0.0, shift, 0.0]), schema.free_class);
        for x in 0..32 {
            for y in 0..32i64 {
                for z in 0..8 {
                    let src = y - k;
                    let want = if (0..32).contains(&src) { g.get(x, src as usize, z) } else { schema.free_class };
                    bad += usize::from(moved.get(x, y as usize, z) != want);
                }
            }
        }
    }
    Ok(vec![identity, Check::exact("lateral shift = index shift", bad).detail("+-2 m, +-4 m")])
}

/// The self-test groups: codec, gradients, mask, control identity, Euler
/// and metric oracles.
pub fn selftest_suite(seed: u64, fault: Option<ControlFault>) -> Result<Vec<Check>> {
    let mut out = vec![codec_round_trip()?];
    out.extend(gradient_suite(seed, 20)?);
    out.extend(mask_checks(seed)?);
    out.extend(control_checks(seed, 50, fault)?);
    out.extend(euler_checks(seed)?);
    out.extend(metrics_checks(seed, 50)?);
    Ok(out)
}
