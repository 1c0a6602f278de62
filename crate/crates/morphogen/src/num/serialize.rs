//! Binary parameter container: a versioned flat mapping from parameter name
//! to shape and row-major f64 values, written in sorted-name order.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MGPM" | u32 version | u64 count
//! count x ( u32 name_len | name utf-8 | u32 ndim | ndim x u64 dim | f64 values )
//! ```
//!
//! Values round-trip bit-exactly (`to_le_bytes`/`from_le_bytes`), and the
//! sorted order makes files byte-stable for identical parameter sets.
//! Optimizer state is deliberately not serialized: training phases always
//! start from fresh optimizer state.

use std::io::{Read, Write};

use super::store::ParamStore;
use super::tensor::Tensor;
use super::{NumError, NumResult};

const MAGIC: &[u8; 4] = b"MGPM";
const VERSION: u32 = 1;

/// Write every parameter of `store` (sorted by name) to `w`.
pub fn write_params<W: Write>(store: &ParamStore, w: &mut W) -> NumResult<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for p in store.iter_sorted() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a parameter container back as `(name, tensor)` pairs in file order.
pub fn read_params<R: Read>(r: &mut R) -> NumResult<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumError::MalformedFile(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(NumError::MalformedFile(format!(
            "unsupported container version {version} (supported: {VERSION})"
        )));
    }
    let count = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 1 << 20 {
            return Err(NumError::MalformedFile(format!(
                "implausible name length {name_len}"
            )));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| NumError::MalformedFile(format!("non-utf8 parameter name: {e}")))?;
        let ndim = read_u32(r)? as usize;
        if ndim > 8 {
            return Err(NumError::MalformedFile(format!(
                "implausible rank {ndim} for {name:?}"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return Err(NumError::MalformedFile(format!(
                "implausible element count {n} for {name:?}"
            )));
        }
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> NumResult<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> NumResult<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

impl ParamStore {
    /// Overwrite parameter values from `(name, tensor)` pairs. Every pair
    /// must match an existing parameter of identical shape, and every
    /// parameter must be covered — any mismatch is an error, so loading a
    /// file into the wrong architecture fails loudly.
    pub fn set_values(&mut self, pairs: &[(String, Tensor)]) -> NumResult<()> {
        if pairs.len() != self.len() {
            return Err(NumError::MalformedFile(format!(
                "parameter count mismatch: file has {}, model wants {}",
                pairs.len(),
                self.len()
            )));
        }
        for (name, tensor) in pairs {
            let id = self.lookup(name).ok_or_else(|| {
                NumError::MalformedFile(format!("unknown parameter {name:?} in file"))
            })?;
            if self.value(id).shape() != tensor.shape() {
                return Err(NumError::MalformedFile(format!(
                    "shape mismatch for {name:?}: file {:?}, model {:?}",
                    tensor.shape(),
                    self.value(id).shape()
                )));
            }
            *self.value_mut(id) = tensor.clone();
        }
        Ok(())
    }
}
