//! Raw field files.
//!
//! Binary layout (little-endian): `D`, `H`, `W` as `u32`, then `3·D·H·W`
//! `f32` values, voxel-major with components in (z, y, x) order. A text
//! sidecar (`<file>.txt`) records kind and layout as `key = value` lines.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::field::VectorField;
use crate::error::{Error, Result};
use crate::volume_io::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Displacement,
    Velocity,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Displacement => "displacement",
            FieldKind::Velocity => "velocity",
        }
    }
}

/// Largest voxel count accepted when decoding, to bound allocations.
const MAX_VOXELS: usize = 1 << 28;

pub fn encode_field(field: &VectorField) -> Vec<u8> {
    let dims = field.dims();
    let mut out = Vec::with_capacity(12 + dims.len() * 12);
    for n in dims.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for u in field.vectors() {
        for c in u {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<VectorField> {
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile {
            needed: 12,
            available: bytes.len(),
        });
    }
    let n = [0, 1, 2].map(|a| LittleEndian::read_u32(&bytes[4 * a..]) as usize);
    let dims = Dims::from_array(n);
    let voxels = n[0]
        .checked_mul(n[1])
        .and_then(|v| v.checked_mul(n[2]))
        .filter(|&v| v > 0 && v <= MAX_VOXELS)
        .ok_or_else(|| Error::format("field blob", format!("dims {n:?}")))?;
    let needed = 12 + voxels * 12;
    if bytes.len() != needed {
        return Err(if bytes.len() < needed {
            Error::TruncatedFile {
                needed,
                available: bytes.len(),
            }
        } else {
            Error::format("field blob", format!("{} trailing bytes", bytes.len() - needed))
        });
    }
    let body = &bytes[12..];
    let vectors = (0..voxels)
        .map(|i| [0, 1, 2].map(|c| LittleEndian::read_f32(&body[(3 * i + c) * 4..]) as f64))
        .collect();
    VectorField::from_vectors(dims, vectors)
}

pub fn sidecar_text(field: &VectorField, kind: FieldKind) -> String {
    let d = field.dims();
    format!(
        "kind = {}\ndims = {} {} {}\nunits = voxel\ncomponents = z y x\ndtype = float32-le\nheader_bytes = 12\n",
        kind.as_str(),
        d.d,
        d.h,
        d.w
    )
}

pub fn save_field(path: &Path, field: &VectorField, kind: FieldKind) -> Result<()> {
    std::fs::write(path, encode_field(field)).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, sidecar_text(field, kind)).map_err(|e| Error::io(sidecar, e))
}

pub fn load_field(path: &Path) -> Result<VectorField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    s.into()
}
