//! Binary embedding store.
//!
//! Little-endian layout: magic `AURE`, format version `u32`, backend name
//! (`u16` length + UTF-8), `dim: u32`, `count: u32`, then per record the key
//! (`u16` length + UTF-8, `subject/session/basename`) and `dim` × `f32`.

use std::path::Path;

use super::EmbeddingVector;
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"AURE";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub backend: String,
    pub dim: usize,
    pub vectors: Vec<EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(backend: impl Into<String>, dim: usize, vectors: Vec<EmbeddingVector>) -> Result<Self> {
        let backend = backend.into();
        for v in &vectors {
            if v.values.len() != dim || v.backend != backend {
                return Err(Error::Store(format!(
                    "vector {} ({} values from {}) does not match store {backend}/{dim}",
                    v.record,
                    v.values.len(),
                    v.backend
                )));
            }
        }
        Ok(EmbeddingStore { backend, dim, vectors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.vectors.len() * (32 + 4 * self.dim));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        put_str(&mut out, &self.backend)?;
        out.extend_from_slice(&u32::try_from(self.dim).map_err(|_| Error::Store("dim too large".into()))?.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(self.vectors.len())
                .map_err(|_| Error::Store("too many records".into()))?
                .to_le_bytes(),
        );
        for v in &self.vectors {
            put_str(&mut out, &v.record)?;
            for x in &v.values {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != STORE_MAGIC {
            return Err(Error::Store("bad magic".into()));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(Error::Store(format!("unsupported version {version}")));
        }
        let backend = r.string()?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut vectors = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let record = r.string()?;
            let raw = r.take(4 * dim)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            vectors.push(EmbeddingVector {
                values,
                backend: backend.clone(),
                record,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Store(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(EmbeddingStore { backend, dim, vectors })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Store(format!("string too long: {s}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Store("truncated file".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let b = self.take(2)?;
        let len = u16::from_le_bytes([b[0], b[1]]) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Store("invalid utf-8".into()))
    }
}

pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    std::fs::write(path, store.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}
