use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use occ_cli::manifest::read_manifest;
use occ_core::OrientedBox;
use voxel_pipeline::io::{load_lpcd, save_lpcd};
use voxel_pipeline::LabeledPointCloud;

fn occgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occgen")).args(args).output().expect("spawn occgen")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn selftest_passes_and_mutation_probes_behave() {
    let clean = occgen(&["selftest"]);
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stderr));
    let report = String::from_utf8_lossy(&clean.stderr);
    assert!(report.lines().any(|l| l.starts_with("PASS") && l.contains("max_err")));

    // Scaling hints through a zero projection changes nothing.
    assert_eq!(occgen(&["selftest", "--inject-fault", "hint-scale"]).status.code(), Some(0));

    let broken = occgen(&["selftest", "--inject-fault", "live-projection"]);
    assert_eq!(broken.status.code(), Some(1));
    let report = String::from_utf8_lossy(&broken.stderr);
    assert!(report.lines().any(|l| l.starts_with("FAIL") && l.contains("identity")), "{report}");
}

#[test]
fn synth_dataset_is_reproducible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = occgen(&["--seed", "7", "synth-dataset", "--scenes", "3", "--frames", "4", "--val-scenes", "1", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ma, mb) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap());
    assert_eq!(ma, mb);
    let count = |ext: &str| ma.artifacts.iter().filter(|x| x.path.ends_with(ext)).count();
    assert_eq!((count(".occg"), count(".bevl")), (12, 12));
}

#[test]
fn remove_drops_points_inside_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = LabeledPointCloud { points: vec![[0.0, 0.0, 0.0], [0.4, 0.0, 0.0], [3.0, 0.0, 0.0]], labels: vec![4001, 4002, 11000] };
    let (cloud_path, boxes_path, out) = (dir.path().join("c.lpcd"), dir.path().join("boxes.json"), dir.path().join("out"));
    save_lpcd(&cloud_path, &cloud).unwrap();
    let before = fs::read(&cloud_path).unwrap();
    let boxes = [OrientedBox { center: [0.0; 3], size: [2.0, 2.0, 2.0], yaw: 0.5, class_id: 3, instance_id: 1 }];
    fs::write(&boxes_path, serde_json::to_vec(&boxes).unwrap()).unwrap();
    let o = occgen(&["remove", "--cloud", path(&cloud_path), "--boxes", path(&boxes_path), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kept = load_lpcd(&out.join("cloud.lpcd")).unwrap();
    assert_eq!(kept.labels, vec![11000]);
    assert_eq!(fs::read(&cloud_path).unwrap(), before, "input must not change");
}

#[test]
fn missing_inputs_exit_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = occgen(&["metrics", "--pred", path(&dir.path().join("none")), "--gt", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
