use super::mask::BinaryMask;
use crate::error::{Error, Result};

/// `2|X ∩ Y| / (|X| + |Y|)`; two empty masks agree perfectly (1.0).
pub fn dice(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    x.ensure_same(y)?;
    let (mut inter, mut nx, mut ny) = (0usize, 0usize, 0usize);
    for (&a, &b) in x.voxels().iter().zip(y.voxels()) {
        inter += (a && b) as usize;
        nx += a as usize;
        ny += b as usize;
    }
    if nx + ny == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (nx + ny) as f64)
}

/// `|X| / |Y|` in voxels; spacing cancels on a shared grid.
pub fn volume_ratio(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    x.ensure_same(y)?;
    let ny = y.count();
    if ny == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(x.count() as f64 / ny as f64)
}
