//! Volumes with physical spacing, NIfTI-1 I/O and PGM slice export.

mod nifti;
mod pgm;
mod volume;

pub use nifti::{
    peek_datatype, read_nifti, read_nifti_labels, read_nifti_pair, write_nifti, write_nifti_labels,
    DataType, Endianness, NiftiHeader, DEFAULT_VOX_OFFSET, HEADER_SIZE,
};
pub use pgm::{export_slice, SliceAxis};
pub use volume::{Dims, ImageVolume, LabelVolume, Volume, Voxel, NUM_CLASSES, SEGMENT_NAMES};

use std::path::Path;

use crate::error::{Error, Result};

pub fn load_image(path: &Path) -> Result<ImageVolume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti(&bytes)
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti_labels(&bytes)
}

pub fn save_image(path: &Path, volume: &ImageVolume) -> Result<()> {
    std::fs::write(path, write_nifti(volume)?).map_err(|e| Error::io(path, e))
}

pub fn save_labels(path: &Path, volume: &LabelVolume) -> Result<()> {
    std::fs::write(path, write_nifti_labels(volume)?).map_err(|e| Error::io(path, e))
}
