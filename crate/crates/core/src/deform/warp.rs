use super::field::{position, DisplacementField, VectorField, VelocityField};
use crate::error::Result;
use crate::interp;
use crate::volume_io::{ImageVolume, LabelVolume};

/// `x ∘ φ`: `out(p) = x(p + u(p))`, trilinear with clamp-to-edge.
pub fn warp_image(x: &ImageVolume, phi: &DisplacementField) -> Result<ImageVolume> {
    let dims = x.dims();
    dims.ensure_same(&phi.dims())?;
    let src = x.data();
    let data = phi
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, &u)| interp::trilinear(dims, position(dims, i, u), |j| src[j] as f64) as f32)
        .collect();
    x.with_data(data)
}

/// `s ∘ φ` with nearest-neighbor lookup.
pub fn warp_labels(s: &LabelVolume, phi: &DisplacementField) -> Result<LabelVolume> {
    let dims = s.dims();
    dims.ensure_same(&phi.dims())?;
    let src = s.data();
    let data = phi
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, &u)| src[interp::nearest(dims, position(dims, i, u))])
        .collect();
    s.with_data(data)
}

fn compose_raw(outer: &VectorField, inner: &VectorField) -> VectorField {
    let dims = inner.dims();
    let vectors = inner
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, &u2)| {
            let u1 = outer.sample(position(dims, i, u2));
            [u2[0] + u1[0], u2[1] + u1[1], u2[2] + u1[2]]
        })
        .collect();
    VectorField::from_vectors(dims, vectors).expect("composition of finite fields is finite")
}

/// `(φ1 ∘ φ2)(p) = φ1(p + u2(p))`, returned as a displacement.
pub fn compose_fields(phi1: &DisplacementField, phi2: &DisplacementField) -> Result<DisplacementField> {
    phi1.dims().ensure_same(&phi2.dims())?;
    Ok(DisplacementField(compose_raw(phi1, phi2)))
}

/// Scaling and squaring: `(Id + v / 2^steps)` composed with itself `steps` times.
pub fn exp_velocity(v: &VelocityField, steps: u32) -> DisplacementField {
    let mut u = v.scaled(1.0 / 2f64.powi(steps as i32));
    for _ in 0..steps {
        u = compose_raw(&u, &u);
    }
    DisplacementField(u)
}

/// Fixed-point inversion `u_inv(p) ← −u(p + u_inv(p))`, `iters` rounds.
pub fn invert_field(phi: &DisplacementField, iters: usize) -> DisplacementField {
    let dims = phi.dims();
    let mut inv = VectorField::zeros(dims);
    for _ in 0..iters {
        let next = inv
            .vectors()
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let u = phi.sample(position(dims, i, w));
                [-u[0], -u[1], -u[2]]
            })
            .collect();
        inv = VectorField::from_vectors(dims, next).expect("finite");
    }
    DisplacementField(inv)
}
