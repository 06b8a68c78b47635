use super::volume::{Volume, Voxel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    /// Fixed D; rows are H, columns W.
    Axial,
    /// Fixed H; rows are D, columns W.
    Coronal,
    /// Fixed W; rows are D, columns H.
    Sagittal,
}

impl std::str::FromStr for SliceAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(SliceAxis::Axial),
            "coronal" => Ok(SliceAxis::Coronal),
            "sagittal" => Ok(SliceAxis::Sagittal),
            other => Err(Error::Config(format!("unknown slice axis {other:?}"))),
        }
    }
}

/// Binary PGM (P5) of one slice. Gray levels are min-max scaled over the whole
/// volume, so slices of one volume share a scale; a constant volume maps to 0.
pub fn export_slice<T: Voxel + Into<f64>>(
    volume: &Volume<T>,
    axis: SliceAxis,
    index: usize,
) -> Result<Vec<u8>> {
    let dims = volume.dims();
    let extent = match axis {
        SliceAxis::Axial => dims.d,
        SliceAxis::Coronal => dims.h,
        SliceAxis::Sagittal => dims.w,
    };
    if index >= extent {
        return Err(Error::IndexOutOfRange { index, extent });
    }
    let (rows, cols) = match axis {
        SliceAxis::Axial => (dims.h, dims.w),
        SliceAxis::Coronal => (dims.d, dims.w),
        SliceAxis::Sagittal => (dims.d, dims.h),
    };
    let (lo, hi) = volume
        .data()
        .iter()
        .map(|&v| v.into())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in 0..rows {
        for c in 0..cols {
            let v: f64 = match axis {
                SliceAxis::Axial => volume.get(index, r, c),
                SliceAxis::Coronal => volume.get(r, index, c),
                SliceAxis::Sagittal => volume.get(r, c, index),
            }
            .into();
            let g = if range > 0.0 {
                ((v - lo) / range * 255.0).round()
            } else {
                0.0
            };
            out.push(g as u8);
        }
    }
    Ok(out)
}
