//! Binary sentence-embedding files.
//!
//! Layout, little-endian: magic `SEMB1`, then records of
//! `id_len: u32, id bytes, n: u32, d: u32, n·d f32 row-major`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::nn::Tensor;

pub const EMBEDDINGS_MAGIC: &[u8; 5] = b"SEMB1";

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown magic: not a sentence-embedding file")]
    UnknownMagic,
    #[error("truncated file at byte {offset}")]
    Truncated { offset: usize },
    #[error("document {id}: embedding dimension {found}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("document {id}: {msg}")]
    InvalidRecord { id: String, msg: String },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(EmbeddingsError::Truncated { offset: self.bytes.len() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, EmbeddingsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<(), EmbeddingsError> {
    let path = path.as_ref();
    let mut buf = EMBEDDINGS_MAGIC.to_vec();
    for (id, m) in records {
        let (n, d) = m.dims2();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let io = |source| EmbeddingsError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

/// Read every record; each matrix must have `d_model` columns.
pub fn load_precomputed_embeddings(
    path: impl AsRef<Path>,
    d_model: usize,
) -> Result<BTreeMap<String, Tensor<f32>>, EmbeddingsError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| EmbeddingsError::Io { path: path.to_path_buf(), source })?;
    if bytes.len() < EMBEDDINGS_MAGIC.len() || &bytes[..EMBEDDINGS_MAGIC.len()] != EMBEDDINGS_MAGIC {
        return Err(EmbeddingsError::UnknownMagic);
    }
    let mut cur = Cursor { bytes: &bytes, pos: EMBEDDINGS_MAGIC.len() };
    let mut out = BTreeMap::new();
    while cur.pos < bytes.len() {
        let id_len = cur.u32()?;
        let id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|_| EmbeddingsError::InvalidRecord { id: "?".into(), msg: "id is not UTF-8".into() })?;
        let (n, d) = (cur.u32()?, cur.u32()?);
        if d != d_model {
            return Err(EmbeddingsError::DimensionMismatch { id, expected: d_model, found: d });
        }
        if n == 0 {
            return Err(EmbeddingsError::InvalidRecord { id, msg: "no rows".into() });
        }
        let raw = cur.take(n * d * 4)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingsError::InvalidRecord { id, msg: "non-finite entry".into() });
        }
        let m = Tensor::new(vec![n, d], data).expect("n·d values");
        if out.insert(id.clone(), m).is_some() {
            return Err(EmbeddingsError::InvalidRecord { id, msg: "duplicate id".into() });
        }
    }
    Ok(out)
}
