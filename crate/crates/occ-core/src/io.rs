//! Little-endian binary containers.
//!
//! `OCCG` (occupancy grid):
//!
//! | field        | type             |
//! |--------------|------------------|
//! | magic        | `b"OCCG"`        |
//! | version      | u32 = 1          |
//! | X, Y, Z      | 3 × u32          |
//! | voxel_size   | f32              |
//! | origin       | 3 × f32          |
//! | label_width  | u8 ∈ {1, 2}      |
//! | labels       | X·Y·Z × u8/u16   |
//!
//! Labels are ordered x-major, y-middle, z-minor. Semantic grids use width 1,
//! panoptic grids width 2.
//!
//! `BEVL` (BEV layout): magic `b"BEVL"`, u32 W, u32 H, f32 resolution,
//! u8 channels, then W·H u16 bitmasks ordered x-major (`x * H + y`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{OccError, Result};
use crate::grid::{GridSpec, PanopticVoxelGrid, SemanticOccupancyGrid};
use crate::layout::{BevLayout, LayoutSpec};
use crate::schema::LabelSchema;

pub const OCCG_MAGIC: &[u8; 4] = b"OCCG";
pub const BEVL_MAGIC: &[u8; 4] = b"BEVL";
pub const OCCG_VERSION: u32 = 1;

pub(crate) fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    Ok(f32::from_le_bytes(read_exact(r)?))
}

fn bad(format: &'static str, reason: impl Into<String>) -> OccError {
    OccError::Format { format, reason: reason.into() }
}

/// Raw OCCG contents.
#[derive(Debug, Clone, PartialEq)]
pub struct OccgData {
    pub spec: GridSpec,
    pub label_width: u8,
    pub labels: Vec<u32>,
}

pub fn write_occg(w: &mut impl Write, spec: &GridSpec, labels: &[u32], label_width: u8) -> Result<()> {
    if labels.len() != spec.len() {
        return Err(bad("OCCG", format!("{} labels for {} voxels", labels.len(), spec.len())));
    }
    let max = match label_width {
        1 => u8::MAX as u32,
        2 => u16::MAX as u32,
        _ => return Err(bad("OCCG", format!("label width {label_width}"))),
    };
    if let Some(l) = labels.iter().find(|&&l| l > max) {
        return Err(bad("OCCG", format!("label {l} does not fit width {label_width}")));
    }
    w.write_all(OCCG_MAGIC)?;
    w.write_all(&OCCG_VERSION.to_le_bytes())?;
    for d in spec.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(spec.voxel_size as f32).to_le_bytes())?;
    for o in spec.origin {
        w.write_all(&(o as f32).to_le_bytes())?;
    }
    w.write_all(&[label_width])?;
    let mut buf = Vec::with_capacity(labels.len() * label_width as usize);
    for &l in labels {
        if label_width == 1 {
            buf.push(l as u8);
        } else {
            buf.extend_from_slice(&(l as u16).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_occg(r: &mut impl Read) -> Result<OccgData> {
    if &read_exact::<4>(r)? != OCCG_MAGIC {
        return Err(bad("OCCG", "bad magic"));
    }
    let version = read_u32(r)?;
    if version != OCCG_VERSION {
        return Err(bad("OCCG", format!("unsupported version {version}")));
    }
    let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
    let voxel_size = read_f32(r)? as f64;
    let origin = [read_f32(r)? as f64, read_f32(r)? as f64, read_f32(r)? as f64];
    let spec = GridSpec::new(dims, origin, voxel_size)?;
    let [label_width] = read_exact::<1>(r)?;
    if label_width != 1 && label_width != 2 {
        return Err(bad("OCCG", format!("label width {label_width}")));
    }
    let mut raw = vec![0u8; spec.len() * label_width as usize];
    r.read_exact(&mut raw)?;
    let labels = if label_width == 1 {
        raw.into_iter().map(u32::from).collect()
    } else {
        raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect()
    };
    Ok(OccgData { spec, label_width, labels })
}

pub fn save_semantic(path: &Path, grid: &SemanticOccupancyGrid) -> Result<()> {
    let labels: Vec<u32> = grid.labels.iter().map(|&l| l as u32).collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_occg(&mut w, &grid.spec, &labels, 1)?;
    w.flush()?;
    Ok(())
}

pub fn load_semantic(path: &Path, schema: &LabelSchema) -> Result<SemanticOccupancyGrid> {
    let data = read_occg(&mut BufReader::new(File::open(path)?))?;
    if data.label_width != 1 {
        return Err(bad("OCCG", "expected a semantic (width 1) grid"));
    }
    SemanticOccupancyGrid::from_labels(data.spec, data.labels.into_iter().map(|l| l as u8).collect(), schema)
}

pub fn save_panoptic(path: &Path, grid: &PanopticVoxelGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_occg(&mut w, &grid.spec, &grid.labels, 2)?;
    w.flush()?;
    Ok(())
}

pub fn load_panoptic(path: &Path) -> Result<PanopticVoxelGrid> {
    let data = read_occg(&mut BufReader::new(File::open(path)?))?;
    if data.label_width != 2 {
        return Err(bad("OCCG", "expected a panoptic (width 2) grid"));
    }
    Ok(PanopticVoxelGrid { spec: data.spec, labels: data.labels })
}

pub fn write_bevl(w: &mut impl Write, layout: &BevLayout) -> Result<()> {
    let s = &layout.spec;
    w.write_all(BEVL_MAGIC)?;
    w.write_all(&(s.width as u32).to_le_bytes())?;
    w.write_all(&(s.height as u32).to_le_bytes())?;
    w.write_all(&(s.resolution as f32).to_le_bytes())?;
    w.write_all(&[s.channels as u8])?;
    let buf: Vec<u8> = layout.bits.iter().flat_map(|b| b.to_le_bytes()).collect();
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_bevl(r: &mut impl Read) -> Result<BevLayout> {
    if &read_exact::<4>(r)? != BEVL_MAGIC {
        return Err(bad("BEVL", "bad magic"));
    }
    let width = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let resolution = read_f32(r)? as f64;
    let [channels] = read_exact::<1>(r)?;
    let spec = LayoutSpec { width, height, resolution, channels: channels as usize };
    spec.validate()?;
    let mut raw = vec![0u8; width * height * 2];
    r.read_exact(&mut raw)?;
    let bits: Vec<u16> = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    if channels < 16 {
        if let Some(b) = bits.iter().find(|&&b| b >> channels != 0) {
            return Err(bad("BEVL", format!("bitmask {b:#06x} uses channels beyond {channels}")));
        }
    }
    Ok(BevLayout { spec, bits })
}

pub fn save_layout(path: &Path, layout: &BevLayout) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bevl(&mut w, layout)?;
    w.flush()?;
    Ok(())
}

pub fn load_layout(path: &Path) -> Result<BevLayout> {
    read_bevl(&mut BufReader::new(File::open(path)?))
}
