//! Checkpoint file: `"ECKP"`, version, config digest, stage tag, epoch and a
//! named table of little-endian 32-bit parameter tensors.

use std::path::Path;

use ecat_runtime::{Scalar, Tensor};

use crate::config::Stage;
use crate::error::{CodecError, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 4] = b"ECKP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 8],
    pub stage: Stage,
    pub epoch: u32,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CodecError::Truncated("checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn capture<T: Scalar>(model: &Model<T>, stage: Stage, epoch: u32) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, p)| {
                let data = p.value.data().iter().map(|v| v.as_f64() as f32).collect();
                (p.name.clone(), p.value.shape().to_vec(), data)
            })
            .collect();
        Self { digest: model.config().digest(), stage, epoch, params }
    }

    /// Loads every tensor into `model`. Names, order and shapes must match.
    pub fn restore<T: Scalar>(&self, model: &mut Model<T>) -> Result<()> {
        if self.digest != model.config().digest() {
            return Err(CodecError::Checkpoint("configuration digest mismatch".into()));
        }
        if self.params.len() != model.store.len() {
            return Err(CodecError::Checkpoint(format!(
                "{} tensors in file, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, (name, shape, data)) in ids.into_iter().zip(&self.params) {
            let p = model.store.get(id);
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(CodecError::Checkpoint(format!(
                    "tensor {name} {shape:?} does not match {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            let t = Tensor::new(shape, data.iter().map(|&v| T::from_f64(f64::from(v))).collect())?;
            model.store.set_value(id, t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.digest);
        out.push(self.stage.tag());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CodecError::Checkpoint("bad magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CodecError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut digest = [0u8; 8];
        digest.copy_from_slice(r.take(8)?);
        let stage = Stage::from_tag(r.u8()?).ok_or_else(|| CodecError::Checkpoint("bad stage tag".into()))?;
        let epoch = r.u32()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = usize::from(r.u16()?);
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CodecError::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = usize::from(r.u8()?);
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(CodecError::Truncated("checkpoint"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            params.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(CodecError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { digest, stage, epoch, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CodecError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CodecError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
