//! Binary checkpoints.
//!
//! ```text
//! magic            4 bytes  "C3CK"
//! version          u8
//! num_users        u64 LE
//! num_items        u64 LE
//! dim              u64 LE
//! layers           u64 LE
//! heads            u64 LE
//! ff_dim           u64 LE
//! dropout          f64 LE
//! pool_with_item   u8
//! tensor count     u32 LE
//! per tensor:      rank u32, dims u64 × rank, values f64 LE × product(dims)
//! ```
//!
//! Tensors follow [`C3Model::params`] order. A JSON copy of the
//! hyperparameters is written next to the file as `<name>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{C3Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C3CK";
pub const CHECKPOINT_VERSION: u8 = 1;

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

pub fn encode_checkpoint(model: &C3Model) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + model.num_params() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    for v in [cfg.num_users, cfg.num_items, cfg.dim, cfg.layers, cfg.heads, cfg.ff_dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout.to_le_bytes());
    out.push(u8::from(cfg.contrastive_pool_includes_item));
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for t in params {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<C3Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        num_users: r.u64()?,
        num_items: r.u64()?,
        dim: r.u64()?,
        layers: r.u64()?,
        heads: r.u64()?,
        ff_dim: r.u64()?,
        dropout: r.f64()?,
        contrastive_pool_includes_item: r.u8()? != 0,
    };
    let mut model = C3Model::new(config, 0)?;
    let count = r.u32()? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, architecture has {}",
            params.len()
        )));
    }
    for (i, t) in params.iter_mut().enumerate() {
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {i} has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &C3Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(model.config())?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<C3Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
