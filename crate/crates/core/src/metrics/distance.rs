use super::mask::BinaryMask;
use super::surface::{extract_surface, squared_edt, surface_flags};
use crate::error::{Error, Result};

/// Nearest-surface distances in both directions: for each surface voxel of
/// X the distance to S_Y, and vice versa (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedDistances {
    pub x_to_y: Vec<f64>,
    pub y_to_x: Vec<f64>,
}

impl DirectedDistances {
    pub fn compute(x: &BinaryMask, y: &BinaryMask, spacing: [f64; 3]) -> Result<Self> {
        x.ensure_same(y)?;
        if x.count() == 0 || y.count() == 0 {
            return Err(Error::EmptyMask);
        }
        let dims = x.dims();
        let sx = surface_flags(x);
        let sy = surface_flags(y);
        let dt_x = squared_edt(&sx, dims, spacing);
        let dt_y = squared_edt(&sy, dims, spacing);
        let pick = |flags: &[bool], dt: &[f64]| -> Vec<f64> {
            flags
                .iter()
                .zip(dt)
                .filter(|(&f, _)| f)
                .map(|(_, &d)| d.sqrt())
                .collect()
        };
        Ok(DirectedDistances {
            x_to_y: pick(&sx, &dt_y),
            y_to_x: pick(&sy, &dt_x),
        })
    }

    /// Sum of both directed sums over the total point count.
    pub fn mean_surface_distance(&self) -> f64 {
        let n = self.x_to_y.len() + self.y_to_x.len();
        let s: f64 = self.x_to_y.iter().chain(&self.y_to_x).sum();
        s / n as f64
    }

    /// Nearest-rank percentile over the union of both directed multisets.
    pub fn percentile(&self, q: f64) -> f64 {
        let mut all: Vec<f64> = self.x_to_y.iter().chain(&self.y_to_x).copied().collect();
        all.sort_by(f64::total_cmp);
        nearest_rank(&all, q)
    }

    pub fn hausdorff(&self) -> f64 {
        self.x_to_y.iter().chain(&self.y_to_x).copied().fold(0.0, f64::max)
    }
}

/// Value at rank `ceil(q/100 · n)` (1-based) of sorted data.
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Symmetric mean surface distance in mm.
pub fn msd(x: &BinaryMask, y: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    Ok(DirectedDistances::compute(x, y, spacing)?.mean_surface_distance())
}

/// 95th-percentile Hausdorff distance in mm.
pub fn hd95(x: &BinaryMask, y: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    Ok(DirectedDistances::compute(x, y, spacing)?.percentile(95.0))
}

/// Maximum (classic) Hausdorff distance in mm.
pub fn hausdorff(x: &BinaryMask, y: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    Ok(DirectedDistances::compute(x, y, spacing)?.hausdorff())
}

/// Surface point count of a mask, for callers that report it.
pub fn surface_size(mask: &BinaryMask) -> Result<usize> {
    Ok(extract_surface(mask, [1.0; 3])?.len())
}
