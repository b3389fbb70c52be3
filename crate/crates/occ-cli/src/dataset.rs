//! On-disk procedural datasets: `dataset.json`, `schema.json` and one
//! `scene_NNNN/` directory per scene holding `frame_NN.occg` and
//! `frame_NN.bevl` pairs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use occ_core::io::{load_layout, load_semantic, save_layout, save_semantic};
use occ_core::{BevLayout, LabelSchema, SemanticOccupancyGrid};
use stoccdit::config::{load_json, save_json};
use stoccdit::{DatasetConfig, Scene};

use crate::Result;

pub const CONFIG_NAME: &str = "dataset.json";
pub const SCHEMA_NAME: &str = "schema.json";

pub fn scene_dir(root: &Path, scene: usize) -> PathBuf {
    root.join(format!("scene_{scene:04}"))
}

pub fn frame_stem(frame: usize) -> String {
    format!("frame_{frame:02}")
}

pub fn write_dataset(root: &Path, config: &DatasetConfig, schema: &LabelSchema, scenes: &[Scene]) -> Result<()> {
    fs::create_dir_all(root)?;
    save_json(&root.join(CONFIG_NAME), config)?;
    schema.save(&root.join(SCHEMA_NAME))?;
    for (i, scene) in scenes.iter().enumerate() {
        let dir = scene_dir(root, i);
        fs::create_dir_all(&dir)?;
        for (t, f) in scene.frames.iter().enumerate() {
            save_semantic(&dir.join(frame_stem(t) + ".occg"), &f.grid)?;
            save_layout(&dir.join(frame_stem(t) + ".bevl"), &f.layout)?;
        }
    }
    Ok(())
}

/// One scene's frames as loaded from disk.
pub struct SceneFrames {
    pub grids: Vec<SemanticOccupancyGrid>,
    pub layouts: Vec<BevLayout>,
}

pub struct Dataset {
    pub config: DatasetConfig,
    pub schema: LabelSchema,
    pub scenes: Vec<SceneFrames>,
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let config: DatasetConfig = load_json(&root.join(CONFIG_NAME)).with_context(|| format!("reading {}", root.display()))?;
    config.validate()?;
    let schema = LabelSchema::load(&root.join(SCHEMA_NAME))?;
    let mut scenes = Vec::with_capacity(config.scenes);
    for i in 0..config.scenes {
        let dir = scene_dir(root, i);
        let mut s = SceneFrames { grids: Vec::new(), layouts: Vec::new() };
        for t in 0..config.frames {
            s.grids.push(load_semantic(&dir.join(frame_stem(t) + ".occg"), &schema)?);
            s.layouts.push(load_layout(&dir.join(frame_stem(t) + ".bevl"))?);
        }
        scenes.push(s);
    }
    Ok(Dataset { config, schema, scenes })
}

/// Files in `dir` with extension `ext`, sorted by name. A path to a single
/// file is returned as is.
pub fn list_files(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no .{ext} files in {}", path.display());
    }
    Ok(out)
}
