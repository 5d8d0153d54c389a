//! Checkpoint files.
//!
//! Layout, little-endian: magic `MTXS1`, `version: u32`, `header_len: u32`
//! followed by a JSON header (configs, epoch, seed, optimizer step), then
//! `count: u32` tensors, each `name_len: u32, name, dtype: u8, ndim: u32,
//! dims: u32 × ndim, raw data`. Parameters come first in store order,
//! followed by the Adam moments as `adam.m.<name>` and `adam.v.<name>`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, TrainConfig};
use crate::nn::{AdamState, DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MTXS1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub epoch: usize,
    pub seed: u64,
    pub train_config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    seed: u64,
    adam_step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(buf, name.len());
    buf.extend_from_slice(name.as_bytes());
    buf.push(DType::F32.tag());
    put_u32(buf, t.shape().len());
    for &d in t.shape() {
        put_u32(buf, d);
    }
    for &v in t.data() {
        v.write_le(buf);
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.config.clone(),
            train: self.train_config.clone(),
            epoch: self.epoch,
            seed: self.seed,
            adam_step: self.adam.step,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = CHECKPOINT_MAGIC.to_vec();
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut buf, json.len());
        buf.extend_from_slice(&json);

        let entries = self.model.params.entries();
        put_u32(&mut buf, entries.len() * 3);
        for e in entries {
            put_tensor(&mut buf, &e.name, &e.value);
        }
        for (e, m) in entries.iter().zip(&self.adam.m) {
            put_tensor(&mut buf, &format!("adam.m.{}", e.name), m);
        }
        for (e, v) in entries.iter().zip(&self.adam.v) {
            put_tensor(&mut buf, &format!("adam.v.{}", e.name), v);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Corrupt("bad magic".into()));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let header_len = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;

        let count = r.u32()?;
        let mut tensors = HashMap::with_capacity(count);
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut model = Model::<f32>::new(header.model, 0).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let mut adam = AdamState::new(&model.params);
        adam.step = header.adam_step;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>, CheckpointError> {
            let t = tensors.remove(name).ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(CheckpointError::Corrupt(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        for (i, id) in model.params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (name, shape) = {
                let e = model.params.entry(id);
                (e.name.clone(), e.value.shape().to_vec())
            };
            *model.params.value_mut(id) = take(&name, &shape)?;
            adam.m[i] = take(&format!("adam.m.{name}"), &shape)?;
            adam.v[i] = take(&format!("adam.v.{name}"), &shape)?;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(CheckpointError::Corrupt(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint { model, adam, epoch: header.epoch, seed: header.seed, train_config: header.train })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), CheckpointError> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        let tag = self.take(1)?[0];
        if DType::from_tag(tag) != Some(DType::F32) {
            return Err(CheckpointError::Corrupt(format!("tensor {name}: unsupported dtype tag {tag}")));
        }
        let ndim = self.u32()?;
        let shape = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name}: shape overflow")))?;
        let raw = self.take(numel.saturating_mul(4))?;
        let data = raw.chunks_exact(4).map(f32::read_le).collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{fixture_doc, tiny_config};

    fn sample() -> Checkpoint {
        let model = Model::<f32>::new(tiny_config(), 17).unwrap();
        let mut adam = AdamState::new(&model.params);
        adam.step = 3;
        adam.m[0].data_mut()[0] = 0.25;
        Checkpoint { model, adam, epoch: 2, seed: 42, train_config: TrainConfig::default() }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let doc = fixture_doc("d", tiny_config().encoder.vocab_size);
        let a = ck.model.forward_document(&doc, None).unwrap();
        let b = back.model.forward_document(&doc, None).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn truncation_and_version_are_distinct_errors() {
        let bytes = sample().to_bytes();
        for cut in [3, 9, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Corrupt(_))), "cut {cut}");
        }
        let mut bumped = bytes.clone();
        bumped[5..9].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bumped),
            Err(CheckpointError::Version { found, expected: CHECKPOINT_VERSION }) if found == CHECKPOINT_VERSION + 1
        ));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn freeze_flag_survives_round_trip() {
        let mut ck = sample();
        ck.model.set_encoder_frozen(true);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert!(back.model.config.freeze_encoder);
        assert_eq!(back.model.params.entries().iter().filter(|e| e.frozen).count(), ck.model.params.entries().iter().filter(|e| e.frozen).count());
    }
}
