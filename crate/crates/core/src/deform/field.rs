use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;

use super::smooth::gaussian_smooth_field;
use crate::error::{Error, Result};
use crate::interp;
use crate::volume_io::Dims;

/// Dense per-voxel 3-vectors in voxel units, components ordered (z, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    dims: Dims,
    vectors: Vec<[f64; 3]>,
}

impl VectorField {
    pub fn zeros(dims: Dims) -> Self {
        VectorField {
            dims,
            vectors: vec![[0.0; 3]; dims.len()],
        }
    }

    pub fn constant(dims: Dims, c: [f64; 3]) -> Self {
        VectorField {
            dims,
            vectors: vec![c; dims.len()],
        }
    }

    pub fn from_vectors(dims: Dims, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if dims.is_empty() || vectors.len() != dims.len() {
            return Err(Error::DataLength {
                len: vectors.len() * 3,
                dims: dims.as_array(),
            });
        }
        if vectors.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteData);
        }
        Ok(VectorField { dims, vectors })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    /// Trilinear, clamp-to-edge sample at a continuous position.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let v = &self.vectors;
        [
            interp::trilinear(self.dims, p, |i| v[i][0]),
            interp::trilinear(self.dims, p, |i| v[i][1]),
            interp::trilinear(self.dims, p, |i| v[i][2]),
        ]
    }

    pub fn scaled(&self, s: f64) -> Self {
        VectorField {
            dims: self.dims,
            vectors: self
                .vectors
                .iter()
                .map(|u| [u[0] * s, u[1] * s, u[2] * s])
                .collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|u| norm(*u)).fold(0.0, f64::max)
    }

    /// Largest vector norm over voxels at least `margin` away from every face.
    pub fn max_interior_norm(&self, margin: usize) -> f64 {
        let d = self.dims;
        let mut m = 0.0f64;
        for z in margin..d.d.saturating_sub(margin) {
            for y in margin..d.h.saturating_sub(margin) {
                for x in margin..d.w.saturating_sub(margin) {
                    m = m.max(norm(self.vectors[d.index(z, y, x)]));
                }
            }
        }
        m
    }
}

#[inline]
pub(crate) fn norm(u: [f64; 3]) -> f64 {
    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
}

#[inline]
pub(crate) fn position(dims: Dims, i: usize, u: [f64; 3]) -> [f64; 3] {
    let [z, y, x] = dims.coords(i);
    [z as f64 + u[0], y as f64 + u[1], x as f64 + u[2]]
}

macro_rules! field_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub VectorField);

        impl $name {
            pub fn zeros(dims: Dims) -> Self {
                $name(VectorField::zeros(dims))
            }

            pub fn constant(dims: Dims, c: [f64; 3]) -> Self {
                $name(VectorField::constant(dims, c))
            }

            pub fn from_vectors(dims: Dims, vectors: Vec<[f64; 3]>) -> Result<Self> {
                VectorField::from_vectors(dims, vectors).map($name)
            }

            pub fn into_inner(self) -> VectorField {
                self.0
            }
        }

        impl Deref for $name {
            type Target = VectorField;

            fn deref(&self) -> &VectorField {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut VectorField {
                &mut self.0
            }
        }
    };
}

field_newtype!(
    /// `u` of the transform `φ(p) = p + u(p)`: sample the source at `p + u(p)`.
    DisplacementField
);

field_newtype!(
    /// Stationary velocity `v`; `φ = exp(v)` and `φ⁻¹ = exp(−v)`.
    VelocityField
);

impl VelocityField {
    pub fn negated(&self) -> VelocityField {
        VelocityField(self.0.scaled(-1.0))
    }
}

/// Gaussian-smoothed white noise rescaled so its largest vector has norm
/// `max_norm` voxels.
pub fn smooth_random_velocity<R: Rng>(dims: Dims, sigma: f64, max_norm: f64, rng: &mut R) -> VelocityField {
    let noise: Vec<[f64; 3]> = (0..dims.len())
        .map(|_| {
            [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ]
        })
        .collect();
    let field = VectorField {
        dims,
        vectors: noise,
    };
    let smooth = gaussian_smooth_field(&field, sigma);
    let m = smooth.max_norm();
    let s = if m > 0.0 { max_norm / m } else { 0.0 };
    VelocityField(smooth.scaled(s))
}
