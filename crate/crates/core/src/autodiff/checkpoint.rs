//! Parameter checkpoints.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic   b"LFPT"
//! version u32 = 1
//! count   u32
//! count × { name_len u32, name (UTF-8), rank u32, dims u32 × rank, data f32 × Π dims }
//! ```
//!
//! A JSON manifest beside the binary (`<file>.json`) lists each tensor's name,
//! shape and byte offset of its data, plus caller metadata such as the model
//! configuration.

use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_NAME: usize = 1024;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint(params: &ParamStore<f32>) -> (Vec<u8>, Vec<TensorEntry>) {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut entries = Vec::with_capacity(params.len());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: out.len(),
        });
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    (out, entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::TruncatedFile {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(LittleEndian::read_u32(self.take(4)?) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        if name_len == 0 || name_len > MAX_NAME {
            return Err(Error::format("checkpoint", format!("name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "name is not UTF-8".to_string()))?
            .to_string();
        let rank = r.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format("checkpoint", format!("rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u32()?;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::format("checkpoint", format!("bad extent {d} in {name:?}")))?;
            shape.push(d);
        }
        let raw = r.take(numel.checked_mul(4).ok_or(Error::TruncatedFile {
            needed: usize::MAX,
            available: bytes.len(),
        })?)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(LittleEndian::read_f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData);
        }
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes the binary and its manifest.
pub fn save_checkpoint(path: &Path, params: &ParamStore<f32>, metadata: serde_json::Value) -> Result<()> {
    let (bytes, tensors) = encode_checkpoint(params);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let manifest = CheckpointManifest {
        format: "liverformer-params".into(),
        version: CHECKPOINT_VERSION,
        tensors,
        metadata,
    };
    let mp = manifest_path(path);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&mp, text).map_err(|e| Error::io(mp, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn load_manifest(path: &Path) -> Result<CheckpointManifest> {
    let mp = manifest_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(mp, e))?;
    Ok(serde_json::from_str(&text)?)
}
