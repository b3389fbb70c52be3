//! On-disk formats for rendered buffers and camera rigs.
//!
//! - `CBUF`: magic `b"CBUF"`, u32 W, u32 H, then three row-major f32 planes
//!   (x, y, z world coordinates).
//! - `PLKB`: same header with magic `b"PLKB"` and six planes `(d, m)`.
//! - Semantic buffers: 8-bit paletted PNG, palette index = class id.
//! - Rigs: JSON array of cameras with intrinsics, image size, 3×3 rotation
//!   rows, translation and role.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use occ_core::Se3Pose;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraRig};
use crate::error::{RenderError, Result};
use crate::raycast::GeometryBuffers;

pub const CBUF_MAGIC: &[u8; 4] = b"CBUF";
pub const PLKB_MAGIC: &[u8; 4] = b"PLKB";

fn write_planes(w: &mut impl Write, magic: &[u8; 4], width: usize, height: usize, planes: &[Vec<f32>]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    for p in planes {
        debug_assert_eq!(p.len(), width * height);
        let buf: Vec<u8> = p.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a planar container, returning `(width, height, planes)`.
pub fn read_planes(r: &mut impl Read, magic: &'static [u8; 4], count: usize) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let fmt = if magic == CBUF_MAGIC { "CBUF" } else { "PLKB" };
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..4] != magic {
        return Err(RenderError::Format { format: fmt, reason: "bad magic".into() });
    }
    let width = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut planes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut raw = vec![0u8; width * height * 4];
        r.read_exact(&mut raw)?;
        planes.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect());
    }
    Ok((width, height, planes))
}

pub fn write_cbuf(w: &mut impl Write, b: &GeometryBuffers) -> Result<()> {
    let planes: Vec<Vec<f32>> = (0..3).map(|a| b.coordinate.iter().map(|c| c[a] as f32).collect()).collect();
    write_planes(w, CBUF_MAGIC, b.width, b.height, &planes)
}

pub fn write_plkb(w: &mut impl Write, b: &GeometryBuffers) -> Result<()> {
    let planes: Vec<Vec<f32>> = (0..6).map(|a| b.plucker.iter().map(|c| c[a] as f32).collect()).collect();
    write_planes(w, PLKB_MAGIC, b.width, b.height, &planes)
}

fn save_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_cbuf(path: &Path, b: &GeometryBuffers) -> Result<()> {
    save_with(path, |w| write_cbuf(w, b))
}

pub fn save_plkb(path: &Path, b: &GeometryBuffers) -> Result<()> {
    save_with(path, |w| write_plkb(w, b))
}

/// Fixed palette: index 0..=20 get distinct colours, everything else black.
pub fn palette() -> Vec<u8> {
    const COLORS: [[u8; 3]; 21] = [
        [255, 120, 50],
        [255, 192, 203],
        [255, 255, 0],
        [0, 150, 245],
        [0, 255, 255],
        [200, 180, 0],
        [255, 0, 0],
        [255, 240, 150],
        [135, 60, 0],
        [160, 32, 240],
        [255, 0, 255],
        [139, 137, 137],
        [75, 0, 75],
        [150, 240, 80],
        [230, 230, 250],
        [0, 175, 0],
        [255, 255, 255],
        [120, 120, 220],
        [220, 220, 120],
        [70, 130, 180],
        [0, 0, 0],
    ];
    let mut p = vec![0u8; 256 * 3];
    for (i, c) in COLORS.iter().enumerate() {
        p[i * 3..i * 3 + 3].copy_from_slice(c);
    }
    p
}

pub fn write_semantic_png(w: impl Write, width: usize, height: usize, semantic: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette());
    let mut writer = enc.write_header()?;
    writer.write_image_data(semantic)?;
    writer.finish()?;
    Ok(())
}

pub fn save_semantic_png(path: &Path, b: &GeometryBuffers) -> Result<()> {
    save_with(path, |w| write_semantic_png(w, b.width, b.height, &b.semantic))
}

/// Decodes a paletted PNG into `(width, height, indices)`.
pub fn load_semantic_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Format { format: "PNG", reason: "expected 8-bit paletted image".into() });
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    role: String,
}

pub fn rig_to_json(rig: &CameraRig) -> Result<String> {
    let cams: Vec<CameraJson> = rig
        .cameras
        .iter()
        .map(|c| CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: c.pose.rotation_rows(),
            translation: c.pose.translation.into(),
            role: c.role.to_string(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&cams)?)
}

pub fn rig_from_json(s: &str) -> Result<CameraRig> {
    let cams: Vec<CameraJson> = serde_json::from_str(s)?;
    let cameras = cams
        .into_iter()
        .map(|c| {
            Ok(Camera {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
                pose: Se3Pose::from_rows(c.rotation, c.translation)?,
                role: c.role.parse()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rig = CameraRig { cameras };
    rig.validate()?;
    Ok(rig)
}

pub fn save_rig(path: &Path, rig: &CameraRig) -> Result<()> {
    std::fs::write(path, rig_to_json(rig)?)?;
    Ok(())
}

pub fn load_rig(path: &Path) -> Result<CameraRig> {
    rig_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raycast::raycast_buffers;
    use occ_core::{GridSpec, SemanticOccupancyGrid};

    #[test]
    fn buffers_round_trip() {
        let rig = CameraRig::surround([0.0, 0.0, 1.0], 0.5, (6.0, 6.0, 8, 6));
        let spec = GridSpec::centered([8, 8, 4], 1.0, 0.0);
        let mut g = SemanticOccupancyGrid::filled(spec, 5);
        for x in 0..8 {
            for y in 0..8 {
                g.set(x, y, 0, 1);
            }
        }
        let b = raycast_buffers(&g, 5, &rig.cameras[1], 50.0);
        let mut buf = Vec::new();
        write_cbuf(&mut buf, &b).unwrap();
        assert_eq!(buf.len(), 12 + 3 * 48 * 4);
        let (w, h, planes) = read_planes(&mut buf.as_slice(), CBUF_MAGIC, 3).unwrap();
        assert_eq!((w, h), (8, 6));
        for (i, c) in b.coordinate.iter().enumerate() {
            assert_eq!(planes[2][i], c[2] as f32);
        }
        let mut buf = Vec::new();
        write_plkb(&mut buf, &b).unwrap();
        assert!(read_planes(&mut buf.as_slice(), CBUF_MAGIC, 6).is_err());
        assert_eq!(read_planes(&mut buf.as_slice(), PLKB_MAGIC, 6).unwrap().2.len(), 6);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        save_semantic_png(&p, &b).unwrap();
        assert_eq!(load_semantic_png(&p).unwrap(), (8, 6, b.semantic.clone()));
        assert!(b.semantic.contains(&1));
    }

    #[test]
    fn rig_json_round_trip() {
        let rig = CameraRig::surround([1.0, 2.0, 1.5], 0.8, (20.0, 20.0, 32, 24));
        let back = rig_from_json(&rig_to_json(&rig).unwrap()).unwrap();
        assert_eq!(back, rig);
        let s = rig_to_json(&rig).unwrap().replace("\"BL\"", "\"F\"");
        assert!(rig_from_json(&s).is_err());
    }
}
