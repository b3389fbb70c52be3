//! `PKPT` parameter container (little-endian):
//! magic `b"PKPT"`, u32 tensor count, then per tensor u32 name length,
//! UTF-8 name, u32 rank, rank × u32 dims and the f64 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::param::Module;
use crate::tensor::Tensor;

pub const PKPT_MAGIC: &[u8; 4] = b"PKPT";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_pkpt(w: &mut impl Write, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(PKPT_MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let buf: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_pkpt(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PKPT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let count = read_u32(r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("non-UTF-8 tensor name".into()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Named parameter values in visit order, under `prefix`.
pub fn module_tensors(m: &dyn Module, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit(prefix, &mut |name, p| out.push((name.to_string(), p.value.clone())));
    out
}

/// Loads every parameter of `m` (named under `prefix`) from `tensors`.
/// Missing names or shape mismatches are errors; extra tensors are ignored.
pub fn load_module(m: &mut dyn Module, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut err = None;
    m.visit_mut(prefix, &mut |name, p| {
        if err.is_some() {
            return;
        }
        match tensors.iter().find(|(n, _)| n == name) {
            Some((_, t)) if t.shape() == p.value.shape() => p.value = t.clone(),
            Some((_, t)) => {
                err = Some(NnError::Checkpoint(format!("{name}: shape {:?}, expected {:?}", t.shape(), p.value.shape())))
            }
            None => err = Some(NnError::Checkpoint(format!("missing tensor {name}"))),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn save_pkpt(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pkpt(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_pkpt(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_pkpt(&mut BufReader::new(File::open(path)?))
}

/// Looks up a tensor by name.
pub fn find<'a>(tensors: &'a [(String, Tensor)], name: &str) -> Option<&'a Tensor> {
    tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::Linear;

    #[test]
    fn round_trip_module() {
        let mut rng = crate::rng::stream(0, "ckpt");
        let a = Linear::new(3, 2, &mut rng);
        let mut buf = Vec::new();
        write_pkpt(&mut buf, &module_tensors(&a, "enc")).unwrap();
        assert_eq!(&buf[..4], b"PKPT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        let tensors = read_pkpt(&mut buf.as_slice()).unwrap();
        assert_eq!(tensors[0].0, "enc.weight");
        let mut b = Linear::zeros(3, 2);
        load_module(&mut b, "enc", &tensors).unwrap();
        assert_eq!(a.weight.value, b.weight.value);
        let mut c = Linear::zeros(2, 2);
        assert!(load_module(&mut c, "enc", &tensors).is_err());
        assert!(load_module(&mut b, "dec", &tensors).is_err());
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_pkpt(&mut &b"XKPT\0\0\0\0"[..]).is_err());
    }
}
