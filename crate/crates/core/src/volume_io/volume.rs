use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of label classes: background plus nine Couinaud segments.
pub const NUM_CLASSES: usize = 10;

/// Display names of the foreground classes, indexed by `class - 1`.
pub const SEGMENT_NAMES: [&str; 9] = ["I", "II", "III", "IVa", "IVb", "V", "VI", "VII", "VIII"];

/// Grid extents in (slowest → fastest) = (D, H, W) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(d: usize, h: usize, w: usize) -> Self {
        Dims { d, h, w }
    }

    pub const fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    #[inline]
    pub const fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        let z = i / (self.w * self.h);
        [z, y, x]
    }

    pub fn ensure_same(&self, other: &Dims) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DimsMismatch(self.as_array(), other.as_array()))
        }
    }
}

/// A scalar that can live in a [`Volume`].
pub trait Voxel: Copy + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    fn validate(self) -> Result<()>;
}

impl Voxel for f32 {
    fn validate(self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteData)
        }
    }
}

impl Voxel for u8 {
    fn validate(self) -> Result<()> {
        if (self as usize) < NUM_CLASSES {
            Ok(())
        } else {
            Err(Error::InvalidLabel(self as f64))
        }
    }
}

/// A 3D grid with physical spacing (mm per voxel, (sz, sy, sx)).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<T>,
}

/// CT intensities: HU before normalization, [0, 1] after.
pub type ImageVolume = Volume<f32>;

/// Class IDs 0..=9 (background, then Couinaud I..VIII with IVa/IVb split).
pub type LabelVolume = Volume<u8>;

pub(crate) fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::NonPositiveSpacing(spacing))
    }
}

impl<T: Voxel> Volume<T> {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3], data)
    }

    pub fn with_origin(dims: Dims, spacing: [f64; 3], origin: [f64; 3], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || data.len() != dims.len() {
            return Err(Error::DataLength {
                len: data.len(),
                dims: dims.as_array(),
            });
        }
        check_spacing(spacing)?;
        data.iter().try_for_each(|v| v.validate())?;
        Ok(Volume {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: [f64; 3], value: T) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.len()])
    }

    /// Same geometry as `self`, new contents.
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Volume::with_origin(self.dims, self.spacing, self.origin, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.dims.index(z, y, x)]
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> Result<()> {
        self.dims.ensure_same(&other.dims)
    }
}

impl LabelVolume {
    /// Sorted set of class IDs present.
    pub fn class_set(&self) -> Vec<u8> {
        let mut seen = [false; NUM_CLASSES];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..NUM_CLASSES as u8).filter(|&c| seen[c as usize]).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }

    /// Binary mask of one class.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.data.iter().map(|&v| v == class).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_invariants() {
        let d = Dims::new(1, 1, 2);
        assert!(matches!(
            ImageVolume::new(d, [1.0; 3], vec![0.0]),
            Err(Error::DataLength { .. })
        ));
        assert!(matches!(
            ImageVolume::new(d, [1.0, 0.0, 1.0], vec![0.0, 1.0]),
            Err(Error::NonPositiveSpacing(_))
        ));
        assert!(matches!(
            ImageVolume::new(d, [1.0; 3], vec![0.0, f32::NAN]),
            Err(Error::NonFiniteData)
        ));
        assert!(matches!(
            LabelVolume::new(d, [1.0; 3], vec![0, 10]),
            Err(Error::InvalidLabel(_))
        ));
    }

    #[test]
    fn index_and_coords_agree() {
        let d = Dims::new(3, 4, 5);
        for i in 0..d.len() {
            let [z, y, x] = d.coords(i);
            assert_eq!(d.index(z, y, x), i);
        }
    }

    #[test]
    fn class_set_lists_present_labels() {
        let v = LabelVolume::new(Dims::new(1, 2, 2), [1.0; 3], vec![0, 9, 3, 3]).unwrap();
        assert_eq!(v.class_set(), vec![0, 3, 9]);
        assert_eq!(v.class_counts()[3], 2);
    }
}
