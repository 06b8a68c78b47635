use crate::error::{Error, Result};
use crate::volume_io::{Dims, LabelVolume};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, voxels: Vec<bool>) -> Result<Self> {
        if voxels.len() != dims.len() {
            return Err(Error::DataLength {
                len: voxels.len(),
                dims: dims.as_array(),
            });
        }
        Ok(BinaryMask { dims, voxels })
    }

    pub fn from_labels(labels: &LabelVolume, class: u8) -> Self {
        BinaryMask {
            dims: labels.dims(),
            voxels: labels.mask(class),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub(crate) fn ensure_same(&self, other: &BinaryMask) -> Result<()> {
        self.dims.ensure_same(&other.dims)
    }
}
