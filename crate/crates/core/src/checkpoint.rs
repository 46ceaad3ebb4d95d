//! Named-tensor archive.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "OCEN" | version | count | count x (name_len | name (UTF-8) | rank | extents[rank] | f32 payload)
//! ```

use std::path::Path;

use oce_autograd::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 4] = b"OCEN";
pub const VERSION: u32 = 1;

const MAX_RANK: usize = 8;

fn malformed(msg: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", msg: msg.into() }
}

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(malformed(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(malformed("bad magic bytes"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| malformed(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(malformed(format!("{name}: rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let e = r.u32("extent")? as usize;
            if e == 0 {
                return Err(malformed(format!("{name}: zero extent")));
            }
            numel = numel.checked_mul(e).ok_or_else(|| malformed(format!("{name}: extent overflow")))?;
            shape.push(e);
        }
        let nbytes = numel.checked_mul(4).ok_or_else(|| malformed(format!("{name}: extent overflow")))?;
        let payload = r.take(nbytes, "payload")?;
        let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(&shape, data).map_err(|e| malformed(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Every parameter and buffer, in store order.
pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Vec<(String, Tensor<f32>)> {
    store.iter().map(|(_, p)| (p.name.clone(), p.value.cast())).collect()
}

/// Overwrites store values; names and shapes must match one to one.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(malformed(format!("{} tensors for a model with {}", tensors.len(), store.len())));
    }
    let mut seen = std::collections::HashSet::new();
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(malformed(format!("duplicate tensor {name}")));
        }
        let p = store.by_name_mut(name).ok_or_else(|| malformed(format!("unknown tensor {name}")))?;
        if p.value.shape() != t.shape() {
            return Err(malformed(format!("{name}: shape {:?}, model expects {:?}", t.shape(), p.value.shape())));
        }
        p.value = t.cast();
    }
    Ok(())
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(&from_store(store))).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_into(store, &decode(&bytes)?)
}
