//! Log-domain demons registration with a Gaussian pyramid.
//!
//! Each iteration warps the moving image by `exp(v)`, computes the Thirion
//! force from the fixed-image gradient, adds it to `v`, and smooths `v`.

use super::field::{VectorField, VelocityField};
use super::smooth::gaussian_smooth;
use super::warp::{exp_velocity, warp_image};
use crate::error::{Error, Result};
use crate::interp;
use crate::volume_io::{Dims, ImageVolume};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    /// Velocity regularization, voxels at each level.
    pub smoothing_sigma: f64,
    /// Force normalization α in the denominator `|∇f|² + α·(m − f)²`.
    pub force_normalization: f64,
    pub exp_steps: u32,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            pyramid_levels: 3,
            iterations_per_level: 30,
            smoothing_sigma: 2.0,
            force_normalization: 1.0,
            exp_steps: 6,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pyramid_levels >= 1
            && self.iterations_per_level >= 1
            && self.smoothing_sigma > 0.0
            && self.force_normalization > 0.0
            && self.exp_steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid registration config {self:?}")))
        }
    }
}

/// Dims of the next-coarser level; axes stop halving below 4 voxels.
fn coarser(d: Dims) -> Dims {
    let h = |n: usize| if n >= 8 { n.div_ceil(2) } else { n };
    Dims::new(h(d.d), h(d.h), h(d.w))
}

fn ratio(fine: Dims, coarse: Dims) -> [f64; 3] {
    let f = fine.as_array();
    let c = coarse.as_array();
    [0, 1, 2].map(|a| f[a] as f64 / c[a] as f64)
}

/// Resample a scalar grid onto `to` with voxel-center alignment.
fn resample_grid(data: &[f64], from: Dims, to: Dims) -> Vec<f64> {
    let s = ratio(from, to);
    (0..to.len())
        .map(|i| {
            let c = to.coords(i);
            let p = [0, 1, 2].map(|a| (c[a] as f64 + 0.5) * s[a] - 0.5);
            interp::trilinear(from, p, |j| data[j])
        })
        .collect()
}

fn downsample(data: &[f64], from: Dims, to: Dims) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    resample_grid(&gaussian_smooth(data, from, 1.0), from, to)
}

/// Upsample velocity to a finer grid, rescaling components to the new units.
fn upsample_velocity(v: &VectorField, to: Dims) -> VectorField {
    let from = v.dims();
    let s = ratio(to, from);
    let vectors = (0..to.len())
        .map(|i| {
            let c = to.coords(i);
            let p = [0, 1, 2].map(|a| (c[a] as f64 + 0.5) / s[a] - 0.5);
            let u = v.sample(p);
            [u[0] * s[0], u[1] * s[1], u[2] * s[2]]
        })
        .collect();
    VectorField::from_vectors(to, vectors).expect("finite")
}

fn gradient(data: &[f64], dims: Dims) -> Vec<[f64; 3]> {
    let n = dims.as_array();
    (0..dims.len())
        .map(|i| {
            let c = dims.coords(i);
            let mut g = [0.0; 3];
            for a in 0..3 {
                if n[a] < 2 {
                    continue;
                }
                let mut lo = c;
                let mut hi = c;
                lo[a] = c[a].saturating_sub(1);
                hi[a] = (c[a] + 1).min(n[a] - 1);
                let span = (hi[a] - lo[a]) as f64;
                g[a] = (data[dims.index(hi[0], hi[1], hi[2])] - data[dims.index(lo[0], lo[1], lo[2])]) / span;
            }
            g
        })
        .collect()
}

fn register_level(
    fixed: &[f64],
    moving: &[f64],
    dims: Dims,
    mut v: VectorField,
    cfg: &RegistrationConfig,
) -> Result<VectorField> {
    let grad = gradient(fixed, dims);
    let moving_vol = ImageVolume::new(dims, [1.0; 3], moving.iter().map(|&m| m as f32).collect())?;
    let alpha = cfg.force_normalization;
    for _ in 0..cfg.iterations_per_level {
        let phi = exp_velocity(&VelocityField(v.clone()), cfg.exp_steps);
        let warped = warp_image(&moving_vol, &phi)?;
        for (i, u) in v.vectors_mut().iter_mut().enumerate() {
            let diff = warped.data()[i] as f64 - fixed[i];
            let g = grad[i];
            let denom = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + alpha * diff * diff;
            if denom > 1e-12 {
                // descent direction for (m∘φ − f)²
                let k = -diff / denom;
                u[0] += k * g[0];
                u[1] += k * g[1];
                u[2] += k * g[2];
            }
        }
        v = super::smooth::gaussian_smooth_field(&v, cfg.smoothing_sigma);
    }
    Ok(v)
}

/// Registers `moving` onto `fixed`: with `φ = exp(v)`, `moving ∘ φ ≈ fixed`.
pub fn register(fixed: &ImageVolume, moving: &ImageVolume, cfg: &RegistrationConfig) -> Result<VelocityField> {
    cfg.validate()?;
    fixed.same_grid(moving)?;
    let mut pyramid = vec![fixed.dims()];
    for _ in 1..cfg.pyramid_levels {
        let next = coarser(*pyramid.last().unwrap());
        if next == *pyramid.last().unwrap() {
            break;
        }
        pyramid.push(next);
    }
    let f0: Vec<f64> = fixed.data().iter().map(|&x| x as f64).collect();
    let m0: Vec<f64> = moving.data().iter().map(|&x| x as f64).collect();
    let mut fixed_levels = vec![f0];
    let mut moving_levels = vec![m0];
    for w in pyramid.windows(2) {
        let f = downsample(fixed_levels.last().unwrap(), w[0], w[1]);
        let m = downsample(moving_levels.last().unwrap(), w[0], w[1]);
        fixed_levels.push(f);
        moving_levels.push(m);
    }
    let mut v = VectorField::zeros(*pyramid.last().unwrap());
    for level in (0..pyramid.len()).rev() {
        let dims = pyramid[level];
        if v.dims() != dims {
            v = upsample_velocity(&v, dims);
        }
        v = register_level(&fixed_levels[level], &moving_levels[level], dims, v, cfg)?;
    }
    Ok(VelocityField(v))
}

pub fn mean_squared_error(a: &ImageVolume, b: &ImageVolume) -> Result<f64> {
    a.same_grid(b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}
