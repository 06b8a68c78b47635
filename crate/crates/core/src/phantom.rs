//! Procedural nine-segment phantoms.
//!
//! An ellipsoid is cut by three oblique planes and one axial plane; each
//! occupied side-of-plane pattern is a segment. Every segment draws its
//! texture from the same Gaussian, so only the bright tubes where the planes
//! meet the ellipsoid surface, and the overall geometry, tell segments apart.
//! The scene is rendered through a random smooth diffeomorphism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::LabeledCase;
use crate::deform::{exp_velocity, smooth_random_velocity, DisplacementField};
use crate::error::{Error, Result};
use crate::volume_io::{Dims, ImageVolume, LabelVolume, NUM_CLASSES};

/// Foreground segments per phantom.
pub const SEGMENTS: usize = NUM_CLASSES - 1;

/// `normal · u > offset` in ellipsoid-normalized coordinates, where the
/// ellipsoid is the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// (D, H, W).
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Semi-axes as fractions of the extent along each axis.
    pub semi_axes: [f64; 3],
    pub oblique_planes: [Plane; 3],
    /// Normalized z of the axial cut.
    pub axial_offset: f64,
    pub segment_intensity_mean: f64,
    pub segment_intensity_std: f64,
    pub background_intensity: f64,
    pub vessel_intensity: f64,
    /// Tube radius in voxels.
    pub vessel_radius: f64,
    pub noise_std: f64,
    /// Largest displacement of the random warp, voxels.
    pub warp_magnitude: f64,
    /// Smoothing of the random velocity, voxels.
    pub warp_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let plane = |normal, offset| Plane { normal, offset };
        PhantomConfig {
            dims: [16, 64, 64],
            spacing: [1.0; 3],
            semi_axes: [0.44, 0.42, 0.44],
            // all nine patterns occupied, smallest about 4% of the ellipsoid
            oblique_planes: [
                plane([-0.44, -0.15, 0.89], 0.43),
                plane([0.35, -0.18, 0.92], 0.25),
                plane([-0.45, 0.15, 0.88], -0.06),
            ],
            axial_offset: -0.29,
            segment_intensity_mean: 0.55,
            segment_intensity_std: 0.05,
            background_intensity: 0.1,
            vessel_intensity: 0.85,
            vessel_radius: 1.5,
            noise_std: 0.02,
            warp_magnitude: 2.0,
            warp_sigma: 4.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims.iter().any(|&n| n < 4) {
            return bad(format!("phantom.dims {:?} must be at least 4 per axis", self.dims));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0 && a <= 0.5)) {
            return bad("phantom.semi_axes must be in (0, 0.5]".into());
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return bad("phantom.spacing must be positive".into());
        }
        for p in &self.oblique_planes {
            if !p.offset.is_finite() || p.normal.iter().any(|c| !c.is_finite()) || p.normal == [0.0; 3] {
                return bad("phantom planes need finite, nonzero normals".into());
            }
        }
        let unit = [
            self.segment_intensity_mean,
            self.background_intensity,
            self.vessel_intensity,
        ];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("phantom intensities must lie in [0, 1]".into());
        }
        let nonneg = [
            self.segment_intensity_std,
            self.noise_std,
            self.vessel_radius,
            self.warp_magnitude,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.warp_sigma > 0.0) {
            return bad("phantom std, radius and warp settings must be nonnegative".into());
        }
        Ok(())
    }

    fn grid(&self) -> Dims {
        Dims::from_array(self.dims)
    }

    fn planes(&self) -> [Plane; 4] {
        let [a, b, c] = self.oblique_planes;
        [
            a,
            b,
            c,
            Plane {
                normal: [1.0, 0.0, 0.0],
                offset: self.axial_offset,
            },
        ]
    }

    fn center_and_scale(&self) -> ([f64; 3], [f64; 3]) {
        (
            [0, 1, 2].map(|a| (self.dims[a] as f64 - 1.0) / 2.0),
            [0, 1, 2].map(|a| self.semi_axes[a] * self.dims[a] as f64),
        )
    }
}

/// A generated case together with its tube mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub case: LabeledCase,
    pub vessels: Vec<bool>,
}

struct Scene {
    planes: [Plane; 4],
    center: [f64; 3],
    scale: [f64; 3],
    /// Occupied patterns in ascending order; position + 1 is the label.
    patterns: Vec<u8>,
    radius: f64,
}

enum Point {
    Outside,
    Inside { pattern: u8, vessel: bool },
}

impl Scene {
    fn new(cfg: &PhantomConfig) -> Result<Self> {
        let (center, scale) = cfg.center_and_scale();
        let mut scene = Scene {
            planes: cfg.planes(),
            center,
            scale,
            patterns: Vec::new(),
            radius: cfg.vessel_radius,
        };
        let dims = cfg.grid();
        let mut seen = [false; 16];
        for i in 0..dims.len() {
            let c = dims.coords(i).map(|v| v as f64);
            if let Point::Inside { pattern, .. } = scene.classify(c) {
                seen[pattern as usize] = true;
            }
        }
        scene.patterns = (0..16u8).filter(|&p| seen[p as usize]).collect();
        match scene.patterns.len() {
            n if n < SEGMENTS => Err(Error::DegenerateGeometry(n as u8 + 1)),
            SEGMENTS => Ok(scene),
            n => Err(Error::Config(format!("phantom planes carve {n} regions, need {SEGMENTS}"))),
        }
    }

    fn classify(&self, q: [f64; 3]) -> Point {
        let u = [0, 1, 2].map(|a| (q[a] - self.center[a]) / self.scale[a]);
        let r2: f64 = u.iter().map(|v| v * v).sum();
        if r2 > 1.0 {
            return Point::Outside;
        }
        // first-order voxel distances to the surface and to each plane
        let grad_norm = |g: [f64; 3]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let surface = (1.0 - r2) / grad_norm([0, 1, 2].map(|a| 2.0 * u[a] / self.scale[a])).max(1e-12);
        let mut pattern = 0u8;
        let mut vessel = false;
        for (i, p) in self.planes.iter().enumerate() {
            let f: f64 = (0..3).map(|a| p.normal[a] * u[a]).sum::<f64>() - p.offset;
            if f > 0.0 {
                pattern |= 1 << i;
            }
            let dist = f.abs() / grad_norm([0, 1, 2].map(|a| p.normal[a] / self.scale[a]));
            vessel |= dist <= self.radius && surface <= self.radius;
        }
        Point::Inside { pattern, vessel }
    }

    /// Label of a pattern; patterns the grid never showed map to the
    /// nearest known one in Hamming distance.
    fn label(&self, pattern: u8) -> u8 {
        match self.patterns.binary_search(&pattern) {
            Ok(i) => i as u8 + 1,
            Err(_) => {
                let i = (0..self.patterns.len())
                    .min_by_key(|&i| ((self.patterns[i] ^ pattern).count_ones(), i))
                    .expect("nine patterns");
                i as u8 + 1
            }
        }
    }
}

fn random_warp(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> DisplacementField {
    let dims = cfg.grid();
    let v = smooth_random_velocity(dims, cfg.warp_sigma, cfg.warp_magnitude, rng);
    let phi = exp_velocity(&v, 6);
    let m = phi.max_norm();
    if m > cfg.warp_magnitude && m > 0.0 {
        DisplacementField::from_vectors(dims, phi.scaled(cfg.warp_magnitude / m).vectors().to_vec())
            .expect("finite rescaled field")
    } else {
        phi
    }
}

/// 6-connected components of one class, largest first.
fn class_components(labels: &[u8], dims: Dims, class: u8) -> Vec<Vec<usize>> {
    let mut seen = vec![false; labels.len()];
    let mut comps = Vec::new();
    for s in 0..labels.len() {
        if labels[s] != class || seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            let i = comp[k];
            k += 1;
            for j in neighbors6(dims, i) {
                if labels[j] == class && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            }
        }
        comps.push(comp);
    }
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    comps
}

fn neighbors6(dims: Dims, i: usize) -> impl Iterator<Item = usize> {
    let c = dims.coords(i);
    let n = dims.as_array();
    (0..6).filter_map(move |k| {
        let (a, step) = (k / 2, if k % 2 == 0 { -1isize } else { 1 });
        let q = c[a] as isize + step;
        (q >= 0 && q < n[a] as isize).then(|| {
            let mut nc = c;
            nc[a] = q as usize;
            dims.index(nc[0], nc[1], nc[2])
        })
    })
}

/// Voxel-scale slivers where a cut grazes the surface can split a segment
/// on the grid; each stray piece joins the foreground class it touches most.
fn absorb_fragments(labels: &mut [u8], dims: Dims) {
    for class in 1..=SEGMENTS as u8 {
        for frag in class_components(labels, dims, class).into_iter().skip(1) {
            let mut votes = [0usize; NUM_CLASSES];
            for &i in &frag {
                for j in neighbors6(dims, i) {
                    votes[labels[j] as usize] += 1;
                }
            }
            votes[class as usize] = 0;
            let target = (1..NUM_CLASSES).max_by_key(|&c| (votes[c], std::cmp::Reverse(c))).expect("nine classes");
            // isolated fragments with no foreground neighbor become background
            let target = if votes[target] == 0 { 0 } else { target as u8 };
            frag.iter().for_each(|&i| labels[i] = target);
        }
    }
}

pub fn phantom_id(seed: u64) -> String {
    format!("phantom-{seed:05}")
}

/// One phantom with its tube mask. Geometry is sampled at `p + u(p)`, so
/// labels stay exact and the texture is drawn fresh on the output grid.
pub fn generate_phantom_detailed(cfg: &PhantomConfig, seed: u64) -> Result<Phantom> {
    cfg.validate()?;
    let scene = Scene::new(cfg)?;
    let dims = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = random_warp(cfg, &mut rng);
    let texture = Normal::new(cfg.segment_intensity_mean, cfg.segment_intensity_std).expect("validated std");
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated std");
    let mut labels = vec![0u8; dims.len()];
    let mut vessels = vec![false; dims.len()];
    let mut image = vec![0f32; dims.len()];
    for i in 0..dims.len() {
        let c = dims.coords(i);
        let u = phi.vectors()[i];
        let q = [0, 1, 2].map(|a| c[a] as f64 + u[a]);
        let base = match scene.classify(q) {
            Point::Outside => cfg.background_intensity,
            Point::Inside { pattern, vessel } => {
                labels[i] = scene.label(pattern);
                vessels[i] = vessel;
                if vessel {
                    cfg.vessel_intensity
                } else {
                    texture.sample(&mut rng)
                }
            }
        };
        let n: f64 = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        image[i] = (base + n).clamp(0.0, 1.0) as f32;
    }
    absorb_fragments(&mut labels, dims);
    let mut counts = [0usize; NUM_CLASSES];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    if let Some(c) = (1..=SEGMENTS).find(|&c| counts[c] == 0) {
        return Err(Error::DegenerateGeometry(c as u8));
    }
    let case = LabeledCase::original(
        phantom_id(seed),
        ImageVolume::new(dims, cfg.spacing, image)?,
        LabelVolume::new(dims, cfg.spacing, labels)?,
    )?;
    Ok(Phantom { case, vessels })
}

pub fn generate_phantom(cfg: &PhantomConfig, seed: u64) -> Result<LabeledCase> {
    generate_phantom_detailed(cfg, seed).map(|p| p.case)
}

/// `n` phantoms with seeds `base_seed..base_seed + n`, generated in parallel.
pub fn generate_dataset(n: usize, cfg: &PhantomConfig, base_seed: u64) -> Result<Vec<LabeledCase>> {
    if n == 0 {
        return Err(Error::Config("phantom count must be at least 1".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|k| generate_phantom(cfg, base_seed.wrapping_add(k)))
        .collect()
}
