//! Run manifests: resolved config, seed and a checksum of every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Result;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Contains no timestamps or absolute output paths, so reruns with the same
/// inputs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Every file under `dir` except an existing manifest, sorted by path.
pub fn artifacts(dir: &Path) -> Result<Vec<Artifact>> {
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    let mut out = Vec::new();
    for f in files {
        let rel = f.strip_prefix(dir)?;
        if rel == Path::new(MANIFEST_NAME) {
            continue;
        }
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.push(Artifact { path, sha256: sha256_file(&f)?, bytes: fs::metadata(&f)?.len() });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Checksums the contents of `dir` and writes `dir/manifest.json`.
pub fn write_manifest(dir: &Path, command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Result<Manifest> {
    let manifest = Manifest { command: command.into(), seed, threads, config, artifacts: artifacts(dir)? };
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
