//! Acceptance suite. Runs every criterion at its stated size and tolerance,
//! prints one PASS/FAIL line per criterion followed by its sub-checks, and
//! fails unless every criterion passes or fails only in its documented way.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use occ_cli::checks::{
    codec_round_trip, control_checks, euler_checks, gradient_suite, mask_checks, metrics_checks, plan_checks,
    raycast_checks, resample_checks, voxelize_oracle_check, Check, RaycastStats,
};
use occ_cli::manifest::read_manifest;
use stoccdit::experiment::{run_experiment, ExperimentConfig, ExperimentReport};

const SEED: u64 = 20_240_917;

struct Criterion {
    id: usize,
    title: &'static str,
    checks: Vec<Check>,
}

impl Criterion {
    fn new(id: usize, title: &'static str, checks: Vec<Check>) -> Self {
        Self { id, title, checks }
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn report(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let mut s = format!("{verdict} criterion {:>2}: {}\n", self.id, self.title);
        for c in &self.checks {
            s.push_str(&format!("       {}\n", c.line()));
        }
        s
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let clock = Instant::now();
    let out = f();
    (out, clock.elapsed().as_secs_f64())
}

fn runtime(limit: f64, secs: f64) -> Check {
    Check::within("runtime (s)", secs, limit)
}

fn strictly_decreasing(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] >= w[0]).count()
}

fn training_checks(r: &ExperimentReport, total: f64) -> Vec<Check> {
    let vae_miou = r.vae_val.miou.unwrap_or(0.0);
    let first10 = &r.dit_log.epoch_means[..r.dit_log.epoch_means.len().min(10)];
    let ratio = r.agent_iou / r.baseline_agent_iou.max(f64::MIN_POSITIVE);
    let per_channel: Vec<String> =
        r.agent_per_channel.iter().map(|v| v.map_or("n/a".into(), |v| format!("{v:.3}"))).collect();
    vec![
        Check::within("vae held-out miou below 0.90", (0.90 - vae_miou).max(0.0), 0.0)
            .detail(format!("miou {vae_miou:.4}")),
        Check::within("agent iou below 0.5", (0.5 - r.agent_iou).max(0.0), 0.0)
            .detail(format!("agent iou {:.4}, per channel [{}]", r.agent_iou, per_channel.join(", "))),
        Check::within("agent iou below 3x baseline", (3.0 - ratio).max(0.0), 0.0)
            .detail(format!("baseline {:.4}, ratio {ratio:.1}", r.baseline_agent_iou)),
        Check::exact("loss rises in first 10 epochs", strictly_decreasing(first10) + (10 - first10.len()))
            .detail(format!("{first10:.4?}")),
        runtime(900.0, total).detail(format!("{:?}", r.seconds)),
    ]
}

fn occgen(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_occgen")).args(args).output().expect("spawn occgen");
    assert!(out.status.success(), "occgen {args:?} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr));
}

/// Byte comparison of every OCCG/CBUF/PLKB file under two run directories.
fn compare_outputs(a: &Path, b: &Path) -> (usize, usize) {
    let (ma, mb) = (read_manifest(a).expect("manifest a"), read_manifest(b).expect("manifest b"));
    let mut compared = 0;
    let mut differing = usize::from(ma != mb);
    for art in &ma.artifacts {
        if [".occg", ".cbuf", ".plkb"].iter().any(|e| art.path.ends_with(e)) {
            compared += 1;
            let (x, y) = (fs::read(a.join(&art.path)), fs::read(b.join(&art.path)));
            differing += usize::from(!matches!((x, y), (Ok(x), Ok(y)) if x == y));
        }
    }
    (compared, differing)
}

fn determinism_checks(work: &Path, vae: &Path, dit: &Path) -> Vec<Check> {
    let layouts = work.join("layouts");
    occgen(&["--seed", "5", "synth-dataset", "--scenes", "1", "--frames", "8", "--val-scenes", "0", "--out", layouts.to_str().unwrap()]);
    let scene = layouts.join("scene_0000");
    let mut secs = Vec::new();
    for run in ["run_a", "run_b"] {
        let out = work.join(run);
        let ((), s) = timed(|| {
            occgen(&[
                "--seed", "11", "--threads", "1", "pipeline",
                "--layouts", scene.to_str().unwrap(),
                "--gt", scene.to_str().unwrap(),
                "--vae", vae.to_str().unwrap(),
                "--dit", dit.to_str().unwrap(),
                "--out", out.to_str().unwrap(),
            ])
        });
        secs.push(s);
    }
    let (a, b) = (work.join("run_a"), work.join("run_b"));
    let (compared, differing) = compare_outputs(&a, &b);
    let manifest = read_manifest(&a).expect("manifest");
    let frames = manifest.artifacts.iter().filter(|x| x.path.starts_with("frames/") && x.path.ends_with(".occg")).count();
    let cbufs = manifest.artifacts.iter().filter(|x| x.path.starts_with("buffers/") && x.path.ends_with(".cbuf")).count();
    vec![
        Check::exact("rerun byte mismatches", differing).detail(format!("{compared} OCCG/CBUF/PLKB files and the manifest")),
        Check::exact("frames written minus layouts", frames.abs_diff(8)),
        Check::exact("buffers minus frames x cameras", cbufs.abs_diff(8 * 6)),
        Check::within("8-frame pipeline runtime (s)", secs.iter().copied().fold(0.0, f64::max), 60.0),
    ]
}

/// The fine-step oracle steps voxel_size/50 along each ray, so it misses
/// occupied voxels that a ray only clips along a shorter chord. The DDA is
/// judged against the analytic oracle; the fine-step comparison may only
/// fail through such clips.
fn raycast_failure_is_documented(c: &Criterion, st: &RaycastStats) -> bool {
    let others_pass = c.checks.iter().filter(|k| k.name != "dda vs fine-step first hit").all(|k| k.passed);
    others_pass && st.exact_mismatches == 0 && st.corner_clips == st.fine_step_mismatches && st.max_mismatch_chord < st.fine_step
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();

    let (codec, s) = timed(codec_round_trip);
    results.push(Criterion::new(1, "panoptic codec round trip", vec![codec.unwrap(), runtime(1.0, s)]));

    let (vox, s) = timed(|| voxelize_oracle_check(SEED, 200, 10_000));
    results.push(Criterion::new(2, "voxelization vs count oracle", vec![vox.unwrap(), runtime(30.0, s)]));

    let (grads, s) = timed(|| gradient_suite(SEED, 20));
    let mut grads = grads.unwrap();
    grads.push(runtime(120.0, s));
    results.push(Criterion::new(3, "finite-difference gradient suite", grads));

    results.push(Criterion::new(4, "causal mask oracle and probe", mask_checks(SEED).unwrap()));
    results.push(Criterion::new(5, "flow and Euler identities", euler_checks(SEED).unwrap()));
    results.push(Criterion::new(6, "zero-init control identity", control_checks(SEED, 50, None).unwrap()));
    results.push(Criterion::new(7, "surround plan and densification", plan_checks().unwrap()));

    let (ray, stats) = raycast_checks(SEED, 10, 1000).unwrap();
    results.push(Criterion::new(8, "raycast oracles", ray));

    results.push(Criterion::new(9, "metric oracles", metrics_checks(SEED, 50).unwrap()));

    let work = tempfile::tempdir().unwrap();
    let (exp, total) = timed(|| run_experiment(&ExperimentConfig::toy(), |_| {}).unwrap());
    let (vae_path, dit_path) = (work.path().join("vae.pkpt"), work.path().join("dit.pkpt"));
    exp.vae.save(&vae_path, exp.report.latent_scale).unwrap();
    exp.dit.save(&dit_path).unwrap();
    results.push(Criterion::new(10, "toy end-to-end training", training_checks(&exp.report, total)));

    results.push(Criterion::new(11, "trajectory editing resample", resample_checks(SEED).unwrap()));
    results.push(Criterion::new(12, "pipeline determinism", determinism_checks(work.path(), &vae_path, &dit_path)));

    let mut report = String::from("\n");
    for c in &results {
        report.push_str(&c.report());
    }
    let raycast = &results[7];
    if !raycast.passed() {
        report.push_str(&format!(
            "note: criterion 8 fails only if every fine-step mismatch is a corner clip shorter than the step and the analytic \
             oracle agrees exactly; that holds: {}\n",
            raycast_failure_is_documented(raycast, &stats)
        ));
    }
    // Written to the raw handle so the report shows without --nocapture.
    std::io::stderr().write_all(report.as_bytes()).unwrap();

    let unexpected: Vec<usize> = results
        .iter()
        .filter(|c| !c.passed() && !(c.id == 8 && raycast_failure_is_documented(c, &stats)))
        .map(|c| c.id)
        .collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
