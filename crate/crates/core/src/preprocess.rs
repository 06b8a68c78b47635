//! Isotropic resampling, intensity normalization and fixed-grid crop/pad.
//!
//! Voxel `i` along an axis sits at physical position `(i + 0.5) * spacing`.
//! Resampling maps each target voxel center into continuous source-index
//! coordinates and samples with clamp-to-edge.

use crate::error::{Error, Result};
use crate::interp;
use crate::volume_io::{Dims, ImageVolume, LabelVolume, Volume, Voxel};

/// How intensities are mapped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Clamp a HU window `level ± width / 2` linearly onto [0, 1].
    Window { level: f64, width: f64 },
    /// Per-volume min-max.
    MinMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub target_spacing: f64,
    pub normalization: Normalization,
    pub target_dims: Dims,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: 1.0,
            normalization: Normalization::Window {
                level: -60.0,
                width: 300.0,
            },
            target_dims: Dims::new(32, 256, 256),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing.is_finite() && self.target_spacing > 0.0) {
            return Err(Error::NonPositiveSpacing([self.target_spacing; 3]));
        }
        if let Normalization::Window { width, .. } = self.normalization {
            if !(width > 0.0) {
                return Err(Error::NonPositiveWidth(width));
            }
        }
        if self.target_dims.is_empty() {
            return Err(Error::Config("target_dims must all be >= 1".into()));
        }
        Ok(())
    }
}

fn resampled_dims(dims: Dims, spacing: [f64; 3], target: f64) -> Dims {
    let f = |n: usize, s: f64| ((n as f64 * s / target).round() as usize).max(1);
    Dims::new(f(dims.d, spacing[0]), f(dims.h, spacing[1]), f(dims.w, spacing[2]))
}

/// Source-index coordinate of every target center along each axis.
fn source_coords(dims: Dims, spacing: [f64; 3], target: f64) -> (Dims, [Vec<f64>; 3]) {
    let out = resampled_dims(dims, spacing, target);
    let coords = |n: usize, s: f64| -> Vec<f64> {
        if s == target {
            (0..n).map(|i| i as f64).collect()
        } else {
            (0..n).map(|i| (i as f64 + 0.5) * target / s - 0.5).collect()
        }
    };
    let c = [
        coords(out.d, spacing[0]),
        coords(out.h, spacing[1]),
        coords(out.w, spacing[2]),
    ];
    (out, c)
}

fn resample_with<T: Voxel>(
    v: &Volume<T>,
    target_spacing: f64,
    sample: impl Fn([f64; 3]) -> T,
) -> Result<Volume<T>> {
    if !(target_spacing.is_finite() && target_spacing > 0.0) {
        return Err(Error::NonPositiveSpacing([target_spacing; 3]));
    }
    let (out, [cz, cy, cx]) = source_coords(v.dims(), v.spacing(), target_spacing);
    let mut data = Vec::with_capacity(out.len());
    for z in &cz {
        for y in &cy {
            for x in &cx {
                data.push(sample([*z, *y, *x]));
            }
        }
    }
    Volume::with_origin(out, [target_spacing; 3], v.origin(), data)
}

/// Trilinear resampling to isotropic `target_spacing` mm.
pub fn resample_image(v: &ImageVolume, target_spacing: f64) -> Result<ImageVolume> {
    let dims = v.dims();
    let data = v.data();
    resample_with(v, target_spacing, |p| {
        interp::trilinear(dims, p, |i| data[i] as f64) as f32
    })
}

/// Nearest-neighbor resampling; never introduces new class IDs.
pub fn resample_labels(v: &LabelVolume, target_spacing: f64) -> Result<LabelVolume> {
    let dims = v.dims();
    let data = v.data();
    resample_with(v, target_spacing, |p| data[interp::nearest(dims, p)])
}

/// `clamp((x - (level - width / 2)) / width, 0, 1)`.
pub fn normalize_intensity(v: &ImageVolume, level: f64, width: f64) -> Result<ImageVolume> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::NonPositiveWidth(width));
    }
    let lo = level - width / 2.0;
    let data = v
        .data()
        .iter()
        .map(|&x| ((x as f64 - lo) / width).clamp(0.0, 1.0) as f32)
        .collect();
    v.with_data(data)
}

/// Per-volume min-max onto [0, 1]; a constant volume maps to 0.
pub fn normalize_min_max(v: &ImageVolume) -> ImageVolume {
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = (hi - lo) as f64;
    let data = v
        .data()
        .iter()
        .map(|&x| {
            if range > 0.0 {
                ((x - lo) as f64 / range) as f32
            } else {
                0.0
            }
        })
        .collect();
    v.with_data(data).expect("min-max output is finite")
}

pub fn normalize(v: &ImageVolume, mode: Normalization) -> Result<ImageVolume> {
    match mode {
        Normalization::Window { level, width } => normalize_intensity(v, level, width),
        Normalization::MinMax => Ok(normalize_min_max(v)),
    }
}

/// Center crop where larger, symmetric pad where smaller. When the difference
/// is odd the extra voxel is cropped from / padded on the high-index side.
pub fn crop_or_pad<T: Voxel>(v: &Volume<T>, target: Dims, pad_value: T) -> Result<Volume<T>> {
    if target.is_empty() {
        return Err(Error::Config("target dims must all be >= 1".into()));
    }
    let src = v.dims();
    // offset of the source origin inside the target grid (negative = crop)
    let shift = |n: usize, t: usize| -> isize {
        if t >= n {
            ((t - n) / 2) as isize
        } else {
            -(((n - t) / 2) as isize)
        }
    };
    let off = [shift(src.d, target.d), shift(src.h, target.h), shift(src.w, target.w)];
    let mut data = vec![pad_value; target.len()];
    for z in 0..target.d {
        let sz = z as isize - off[0];
        if sz < 0 || sz >= src.d as isize {
            continue;
        }
        for y in 0..target.h {
            let sy = y as isize - off[1];
            if sy < 0 || sy >= src.h as isize {
                continue;
            }
            for x in 0..target.w {
                let sx = x as isize - off[2];
                if sx < 0 || sx >= src.w as isize {
                    continue;
                }
                data[target.index(z, y, x)] = v.get(sz as usize, sy as usize, sx as usize);
            }
        }
    }
    Volume::with_origin(target, v.spacing(), v.origin(), data)
}

/// The full preparation chain for one annotated case.
pub fn preprocess_case(
    image: &ImageVolume,
    labels: &LabelVolume,
    cfg: &PreprocessConfig,
) -> Result<(ImageVolume, LabelVolume)> {
    cfg.validate()?;
    image.same_grid(labels)?;
    let image = resample_image(image, cfg.target_spacing)?;
    let image = normalize(&image, cfg.normalization)?;
    let image = crop_or_pad(&image, cfg.target_dims, 0.0)?;
    let labels = resample_labels(labels, cfg.target_spacing)?;
    let labels = crop_or_pad(&labels, cfg.target_dims, 0)?;
    Ok((image, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(dims: Dims, spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> f32) -> ImageVolume {
        let data = (0..dims.len())
            .map(|i| {
                let [z, y, x] = dims.coords(i);
                f(z, y, x)
            })
            .collect();
        ImageVolume::new(dims, spacing, data).unwrap()
    }

    #[test]
    fn identity_resample_is_bit_exact() {
        let v = image(Dims::new(3, 4, 5), [1.0; 3], |z, y, x| (z * 7 + y * 3 + x) as f32 * 0.37);
        let r = resample_image(&v, 1.0).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn constant_volume_upsampled() {
        let v = ImageVolume::filled(Dims::new(2, 2, 2), [2.0; 3], 7.0).unwrap();
        let r = resample_image(&v, 1.0).unwrap();
        assert_eq!(r.dims(), Dims::new(4, 4, 4));
        assert!(r.data().iter().all(|&x| x == 7.0));
        assert_eq!(r.spacing(), [1.0; 3]);
    }

    /// Pointwise oracle: evaluate the trilinear interpolant directly from its
    /// eight-corner definition at each new voxel center.
    fn oracle_sample(v: &ImageVolume, p: [f64; 3]) -> f64 {
        let d = v.dims().as_array();
        let mut acc = 0.0;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let c = p[a].max(0.0).min((d[a] - 1) as f64);
            base[a] = c.floor() as usize;
            frac[a] = c - base[a] as f64;
        }
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                idx[a] = if hi { (base[a] + 1).min(d[a] - 1) } else { base[a] };
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * v.get(idx[0], idx[1], idx[2]) as f64;
        }
        acc
    }

    #[test]
    fn ramp_upsample_matches_pointwise_oracle() {
        let v = image(Dims::new(2, 3, 5), [1.0, 2.0, 2.0], |z, y, x| {
            x as f32 * 10.0 + y as f32 - z as f32 * 0.5
        });
        let r = resample_image(&v, 1.0).unwrap();
        assert_eq!(r.dims(), Dims::new(2, 6, 10));
        for i in 0..r.dims().len() {
            let [z, y, x] = r.dims().coords(i);
            let p = [
                (z as f64 + 0.5) * 1.0 / 1.0 - 0.5,
                (y as f64 + 0.5) / 2.0 - 0.5,
                (x as f64 + 0.5) / 2.0 - 0.5,
            ];
            let want = oracle_sample(&v, p);
            assert!((r.data()[i] as f64 - want).abs() < 1e-5, "voxel {i}");
        }
    }

    #[test]
    fn label_upsample_makes_blocks() {
        let mut data = vec![0u8; 8];
        data[Dims::new(2, 2, 2).index(1, 0, 1)] = 5;
        let v = LabelVolume::new(Dims::new(2, 2, 2), [2.0; 3], data).unwrap();
        let r = resample_labels(&v, 1.0).unwrap();
        // enumerate nearest source voxel per target center: t -> round((t + .5)/2 - .5)
        let src = |t: usize| (((t as f64 + 0.5) / 2.0 - 0.5) + 0.5).floor().max(0.0) as usize;
        for i in 0..r.dims().len() {
            let [z, y, x] = r.dims().coords(i);
            let want = v.get(src(z), src(y), src(x));
            assert_eq!(r.data()[i], want);
        }
        let block: usize = r.data().iter().filter(|&&c| c == 5).count();
        assert_eq!(block, 8);
        assert_eq!(r.get(2, 1, 2), 5);
        assert_eq!(r.get(3, 0, 3), 5);
        assert_eq!(resample_labels(&v, 2.0).unwrap(), v);
    }

    #[test]
    fn window_edges() {
        let v = ImageVolume::new(Dims::new(1, 1, 5), [1.0; 3], vec![-210.0, 90.0, -60.0, -1000.0, 400.0])
            .unwrap();
        let n = normalize_intensity(&v, -60.0, 300.0).unwrap();
        assert_eq!(n.data(), &[0.0, 1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            normalize_intensity(&v, 0.0, 0.0),
            Err(Error::NonPositiveWidth(_))
        ));
    }

    #[test]
    fn crop_and_pad_examples() {
        let v = image(Dims::new(3, 3, 3), [1.0; 3], |z, y, x| (z * 9 + y * 3 + x) as f32);
        assert_eq!(crop_or_pad(&v, v.dims(), 0.0).unwrap(), v);
        let c = crop_or_pad(&v, Dims::new(1, 1, 1), 0.0).unwrap();
        assert_eq!(c.data(), &[13.0]);

        let small = image(Dims::new(2, 2, 2), [1.0; 3], |z, y, x| (1 + z * 4 + y * 2 + x) as f32);
        let p = crop_or_pad(&small, Dims::new(4, 4, 4), 0.0).unwrap();
        for i in 0..64 {
            let [z, y, x] = p.dims().coords(i);
            let inside = (1..3).contains(&z) && (1..3).contains(&y) && (1..3).contains(&x);
            let want = if inside { small.get(z - 1, y - 1, x - 1) } else { 0.0 };
            assert_eq!(p.data()[i], want);
        }
        // odd difference: the extra padding goes high
        let p = crop_or_pad(&small, Dims::new(2, 2, 3), 0.0).unwrap();
        assert_eq!(p.get(0, 0, 0), 1.0);
        assert_eq!(p.get(0, 0, 2), 0.0);
    }

    fn arb_volume() -> impl Strategy<Value = ImageVolume> {
        (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(d, h, w)| {
            proptest::collection::vec(-2000.0f32..2000.0, d * h * w)
                .prop_map(move |data| ImageVolume::new(Dims::new(d, h, w), [1.0; 3], data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn normalized_output_in_unit_range(v in arb_volume(), level in -500.0f64..500.0, width in 1.0f64..2000.0) {
            let n = normalize_intensity(&v, level, width).unwrap();
            prop_assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn pad_then_crop_is_identity(v in arb_volume(), extra in (0usize..4, 0usize..4, 0usize..4)) {
            let d = v.dims();
            let big = Dims::new(d.d + extra.0, d.h + extra.1, d.w + extra.2);
            let back = crop_or_pad(&crop_or_pad(&v, big, 0.0).unwrap(), d, 0.0).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn label_ops_never_invent_classes(
            data in proptest::collection::vec(prop_oneof![Just(0u8), Just(3u8), Just(7u8)], 24),
            spacing in (0.5f64..3.0, 0.5f64..3.0, 0.5f64..3.0),
        ) {
            let v = LabelVolume::new(Dims::new(2, 3, 4), [spacing.0, spacing.1, spacing.2], data).unwrap();
            let classes = v.class_set();
            let r = resample_labels(&v, 1.0).unwrap();
            prop_assert!(r.class_set().iter().all(|c| classes.contains(c)));
            let cp = crop_or_pad(&v, Dims::new(1, 5, 2), 0).unwrap();
            prop_assert!(cp.class_set().iter().all(|c| classes.contains(c) || *c == 0));
        }
    }
}
