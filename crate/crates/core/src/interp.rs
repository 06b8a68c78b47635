//! Clamp-to-edge sampling on (D, H, W) grids, in voxel-index coordinates.

use crate::volume_io::Dims;

#[inline]
fn axis(c: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, max) };
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

/// Trilinear sample of `get(index)` at continuous position `p = (z, y, x)`.
#[inline]
pub(crate) fn trilinear(dims: Dims, p: [f64; 3], get: impl Fn(usize) -> f64) -> f64 {
    let (z0, z1, tz) = axis(p[0], dims.d);
    let (y0, y1, ty) = axis(p[1], dims.h);
    let (x0, x1, tx) = axis(p[2], dims.w);
    let g = |z, y, x| get(dims.index(z, y, x));
    let c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), tx);
    let c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), tx);
    let c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), tx);
    let c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), tx);
    lerp(lerp(c00, c01, ty), lerp(c10, c11, ty), tz)
}

#[inline]
fn nearest_axis(c: f64, n: usize) -> usize {
    let r = (c + 0.5).floor();
    if r.is_nan() || r <= 0.0 {
        0
    } else {
        (r as usize).min(n - 1)
    }
}

/// Index of the nearest voxel (ties round up), clamped to the grid.
#[inline]
pub(crate) fn nearest(dims: Dims, p: [f64; 3]) -> usize {
    dims.index(
        nearest_axis(p[0], dims.d),
        nearest_axis(p[1], dims.h),
        nearest_axis(p[2], dims.w),
    )
}
