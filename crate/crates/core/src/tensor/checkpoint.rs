//! Binary checkpoint of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"DCKP"
//! version u32            (currently 1)
//! count   u64
//! count × {
//!     name_len u32, name [u8; name_len] (UTF-8)
//!     rank     u32, extents [u64; rank]
//!     payload  [f64; product(extents)]
//! }
//! ```
//!
//! Entries are written in name order, so identical parameter sets produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

pub const MAGIC: &[u8; 4] = b"DCKP";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
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
}

pub fn decode(buf: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u64()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("extent overflow in {name}")))?;
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("payload overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
