//! `LPCD` point clouds (little-endian): magic `b"LPCD"`, u32 N, then N
//! records of `f32 x, f32 y, f32 z, u32 panoptic label`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::LabeledPointCloud;
use crate::error::{Result, VoxelError};

pub const LPCD_MAGIC: &[u8; 4] = b"LPCD";

pub fn write_lpcd(w: &mut impl Write, cloud: &LabeledPointCloud) -> Result<()> {
    cloud.validate()?;
    w.write_all(LPCD_MAGIC)?;
    w.write_all(&(cloud.len() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        for v in p {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&l.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_lpcd(r: &mut impl Read) -> Result<LabeledPointCloud> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != LPCD_MAGIC {
        return Err(VoxelError::Format("bad magic".into()));
    }
    let n = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let mut raw = vec![0u8; n * 16];
    r.read_exact(&mut raw)?;
    let mut cloud = LabeledPointCloud { points: Vec::with_capacity(n), labels: Vec::with_capacity(n) };
    for rec in raw.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().expect("4 bytes")) as f64;
        cloud.points.push([f(0), f(4), f(8)]);
        cloud.labels.push(u32::from_le_bytes(rec[12..16].try_into().expect("4 bytes")));
    }
    cloud.validate()?;
    Ok(cloud)
}

pub fn save_lpcd(path: &Path, cloud: &LabeledPointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lpcd(&mut w, cloud)?;
    w.flush()?;
    Ok(())
}

pub fn load_lpcd(path: &Path) -> Result<LabeledPointCloud> {
    read_lpcd(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = LabeledPointCloud::new(vec![[1.5, -2.0, 0.25], [0.0, 0.0, 3.0]], vec![4001, 17000]).unwrap();
        let mut buf = Vec::new();
        write_lpcd(&mut buf, &c).unwrap();
        assert_eq!(buf.len(), 8 + 32);
        assert_eq!(read_lpcd(&mut buf.as_slice()).unwrap(), c);
        buf[0] = b'X';
        assert!(read_lpcd(&mut buf.as_slice()).is_err());
    }
}
