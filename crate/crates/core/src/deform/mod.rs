//! Dense displacement / velocity fields and diffeomorphic registration.
//!
//! Fields are in voxel units. A velocity `v` yields the transform pair
//! `φ = exp(v)` and `φ⁻¹ = exp(−v)` by scaling and squaring.

mod blob;
mod field;
mod register;
mod smooth;
mod warp;

pub use blob::{decode_field, encode_field, load_field, save_field, sidecar_path, sidecar_text, FieldKind};
pub use field::{smooth_random_velocity, DisplacementField, VectorField, VelocityField};
pub use register::{mean_squared_error, register, RegistrationConfig};
pub use smooth::{gaussian_smooth, gaussian_smooth_field};
pub use warp::{compose_fields, exp_velocity, invert_field, warp_image, warp_labels};

/// Boundary margin excluded from residual checks; clamp-to-edge is not
/// invertible near faces.
pub const INTERIOR_MARGIN: usize = 3;
