//! Named-tensor container used for weights and BEV history.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      5 bytes  "FBWT1"
//! count      u32      number of records
//! record*    name_len u32, name (UTF-8), ndims u32, dims u64 * ndims,
//!            data f64 * prod(dims) in row-major order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::module::Module;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FBWT1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let ndims = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u64(&mut r)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(&dims, data)?));
    }
    Ok(out)
}

/// Snapshot of all parameters of `m` (values only).
pub fn collect_params<M: Module + ?Sized>(m: &M) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |name, t| {
        out.push((
            name.to_string(),
            Tensor::new(t.shape(), t.data.clone()).expect("valid shape"),
        ))
    });
    out
}

/// Loads values by name; every parameter of `m` must be present with a matching shape.
pub fn load_params<M: Module + ?Sized>(m: &mut M, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut err = None;
    m.visit_params_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match tensors.iter().find(|(n, _)| n == name) {
            None => err = Some(Error::Format(format!("checkpoint is missing {name}"))),
            Some((_, src)) if src.shape() != t.shape() => {
                err = Some(Error::Format(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    src.shape(),
                    t.shape()
                )))
            }
            Some((_, src)) => t.data.copy_from_slice(&src.data),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn save_checkpoint<M: Module + ?Sized>(m: &M, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(f, &collect_params(m))
}

pub fn load_checkpoint<M: Module + ?Sized>(m: &mut M, path: &Path) -> Result<()> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_params(m, &read_tensors(f)?)
}
