//! Boundary voxels and the exact Euclidean distance transform.

use super::mask::BinaryMask;
use crate::error::{Error, Result};
use crate::volume_io::Dims;

/// Boundary voxels of a mask: foreground with at least one 6-neighbor that is
/// background or outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[usize; 3]>,
    pub spacing: [f64; 3],
}

impl SurfacePointSet {
    /// Physical positions in mm.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [0, 1, 2].map(|a| p[a] as f64 * self.spacing[a]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn surface_flags(mask: &BinaryMask) -> Vec<bool> {
    let d = mask.dims();
    let m = mask.voxels();
    let n = d.as_array();
    let mut out = vec![false; d.len()];
    for (i, flag) in out.iter_mut().enumerate() {
        if !m[i] {
            continue;
        }
        let c = d.coords(i);
        let mut boundary = false;
        for a in 0..3 {
            for step in [-1isize, 1] {
                let q = c[a] as isize + step;
                if q < 0 || q >= n[a] as isize {
                    boundary = true;
                } else {
                    let mut nc = c;
                    nc[a] = q as usize;
                    if !m[d.index(nc[0], nc[1], nc[2])] {
                        boundary = true;
                    }
                }
            }
        }
        *flag = boundary;
    }
    out
}

pub fn extract_surface(mask: &BinaryMask, spacing: [f64; 3]) -> Result<SurfacePointSet> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let d = mask.dims();
    let points = surface_flags(mask)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| d.coords(i))
        .collect();
    Ok(SurfacePointSet { points, spacing })
}

/// 1D lower envelope of parabolas: `out[q] = min_p (s·(q − p))² + f[p]`.
/// Entries of `f` that are infinite are not sites.
fn envelope_1d(f: &[f64], s: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    let n = f.len();
    sites.clear();
    bounds.clear();
    let key = |p: usize| f[p] + (p as f64 * s).powi(2);
    for p in 0..n {
        if !f[p].is_finite() {
            continue;
        }
        loop {
            match sites.last() {
                None => {
                    sites.push(p);
                    break;
                }
                Some(&v) => {
                    // abscissa (in index units) where parabolas p and v meet
                    let x = (key(p) - key(v)) / (2.0 * s * s * (p - v) as f64);
                    if let Some(&b) = bounds.last() {
                        if x <= b {
                            sites.pop();
                            bounds.pop();
                            continue;
                        }
                    }
                    bounds.push(x);
                    sites.push(p);
                    break;
                }
            }
        }
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k < bounds.len() && bounds[k] < q as f64 {
            k += 1;
        }
        let p = sites[k];
        *o = (s * (q as f64 - p as f64)).powi(2) + f[p];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest `true`
/// site, by three separable exact passes. Infinite when there are no sites.
pub fn squared_edt(sites: &[bool], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let mut g: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let n = dims.as_array();
    let strides = [dims.h * dims.w, dims.w, 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut sites_buf, mut bounds_buf) = (Vec::new(), Vec::new());
    for axis in [2usize, 1, 0] {
        let len = n[axis];
        line.resize(len, 0.0);
        out.resize(len, 0.0);
        for start in 0..dims.len() {
            if dims.coords(start)[axis] != 0 {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = g[start + t * strides[axis]];
            }
            envelope_1d(&line, spacing[axis], &mut out, &mut sites_buf, &mut bounds_buf);
            for (t, o) in out.iter().enumerate() {
                g[start + t * strides[axis]] = *o;
            }
        }
    }
    g
}

/// Distance (mm) from every voxel to the nearest surface voxel of `mask`.
pub fn distance_transform(mask: &BinaryMask, spacing: [f64; 3]) -> Result<Vec<f64>> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let flags = surface_flags(mask);
    Ok(squared_edt(&flags, mask.dims(), spacing)
        .into_iter()
        .map(f64::sqrt)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(sites: &[bool], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
        let pts: Vec<[usize; 3]> = (0..dims.len()).filter(|&i| sites[i]).map(|i| dims.coords(i)).collect();
        (0..dims.len())
            .map(|i| {
                let c = dims.coords(i);
                pts.iter()
                    .map(|p| {
                        (0..3)
                            .map(|a| ((c[a] as f64 - p[a] as f64) * spacing[a]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_voxel_surface() {
        let dims = Dims::new(4, 5, 6);
        let mut m = vec![false; dims.len()];
        m[dims.index(1, 2, 3)] = true;
        let mask = BinaryMask::new(dims, m).unwrap();
        let s = extract_surface(&mask, [1.0; 3]).unwrap();
        assert_eq!(s.points, vec![[1, 2, 3]]);
        let spacing = [2.0, 0.5, 1.5];
        let dt = distance_transform(&mask, spacing).unwrap();
        for i in 0..dims.len() {
            let c = dims.coords(i);
            let want = ((c[0] as f64 - 1.0) * 2.0).powi(2)
                + ((c[1] as f64 - 2.0) * 0.5).powi(2)
                + ((c[2] as f64 - 3.0) * 1.5).powi(2);
            assert!((dt[i] - want.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn solid_cube_surface_is_all_but_center() {
        let dims = Dims::new(5, 5, 5);
        let m = (0..dims.len())
            .map(|i| dims.coords(i).iter().all(|&c| (1..4).contains(&c)))
            .collect();
        let s = extract_surface(&BinaryMask::new(dims, m).unwrap(), [1.0; 3]).unwrap();
        assert_eq!(s.len(), 26);
        assert!(!s.points.contains(&[2, 2, 2]));
    }

    #[test]
    fn planar_surface_distance() {
        // the slab z < 2 has its surface at z = 1 (z = 0 touches the grid edge,
        // so restrict to voxels with z >= 1)
        let dims = Dims::new(8, 3, 3);
        let sites: Vec<bool> = (0..dims.len()).map(|i| dims.coords(i)[0] == 1).collect();
        let d = squared_edt(&sites, dims, [0.7, 1.0, 1.0]);
        for i in 0..dims.len() {
            let z = dims.coords(i)[0];
            let want = (z as f64 - 1.0).abs() * 0.7;
            assert!((d[i].sqrt() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_errors() {
        let m = BinaryMask::new(Dims::new(2, 2, 2), vec![false; 8]).unwrap();
        assert!(matches!(extract_surface(&m, [1.0; 3]), Err(Error::EmptyMask)));
        assert!(matches!(distance_transform(&m, [1.0; 3]), Err(Error::EmptyMask)));
    }

    #[test]
    fn surface_matches_neighbor_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let dims = Dims::new(rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..7));
            let m: Vec<bool> = (0..dims.len()).map(|_| rng.gen_bool(0.6)).collect();
            if !m.iter().any(|&b| b) {
                continue;
            }
            let mask = BinaryMask::new(dims, m.clone()).unwrap();
            let got = extract_surface(&mask, [1.0; 3]).unwrap().points;
            let n = dims.as_array();
            let mut want = Vec::new();
            for z in 0..n[0] {
                for y in 0..n[1] {
                    for x in 0..n[2] {
                        if !m[dims.index(z, y, x)] {
                            continue;
                        }
                        let fg = |z: isize, y: isize, x: isize| {
                            z >= 0
                                && y >= 0
                                && x >= 0
                                && (z as usize) < n[0]
                                && (y as usize) < n[1]
                                && (x as usize) < n[2]
                                && m[dims.index(z as usize, y as usize, x as usize)]
                        };
                        let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                        let interior = fg(zi - 1, yi, xi)
                            && fg(zi + 1, yi, xi)
                            && fg(zi, yi - 1, xi)
                            && fg(zi, yi + 1, xi)
                            && fg(zi, yi, xi - 1)
                            && fg(zi, yi, xi + 1);
                        if !interior {
                            want.push([z, y, x]);
                        }
                    }
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn edt_matches_brute_force_on_random_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..30 {
            let dims = Dims::new(rng.gen_range(1..17), rng.gen_range(1..17), rng.gen_range(1..17));
            let density = [0.01, 0.05, 0.3][trial % 3];
            let mut sites: Vec<bool> = (0..dims.len()).map(|_| rng.gen_bool(density)).collect();
            sites[rng.gen_range(0..dims.len())] = true;
            let spacing = [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)];
            let got = squared_edt(&sites, dims, spacing);
            let want = brute_force(&sites, dims, spacing);
            for i in 0..dims.len() {
                assert!((got[i].sqrt() - want[i]).abs() <= 1e-9, "trial {trial} voxel {i}");
            }
        }
    }

    #[test]
    fn edt_without_sites_is_infinite() {
        let d = squared_edt(&[false; 4], Dims::new(1, 2, 2), [1.0; 3]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }
}
