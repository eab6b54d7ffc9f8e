//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "REFLMCKP"            8 bytes
//! version u32                   currently 1
//! n_meta  u32, then n_meta × (key: str, value: str)
//! n_param u32, then n_param × (name: str, ndim: u32, dims: ndim × u64, data: Π dims × f64)
//! str     = u32 byte length + UTF-8 bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"REFLMCKP";
pub const VERSION: u32 = 1;

pub type Metadata = BTreeMap<String, String>;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(store: &ParamStore, meta: &Metadata) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + store.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        put_str(&mut out, p.name());
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in p.value().data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, Metadata)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut meta = Metadata::new();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    let mut store = ParamStore::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        store.add(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((store, meta))
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore, meta: &Metadata) -> Result<()> {
    fs::write(path, encode(store, meta))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParamStore, Metadata)> {
    decode(&fs::read(path)?)
}
