//! Deformations: affine maps, stationary velocity fields and their flows,
//! composition, warping, and Jacobian diagnostics.

mod affine;
mod field;
mod integrate;
mod jacobian;
mod velocity;

pub use affine::AffineParams;
pub use field::{warp, warp_with_gradient, Displacement, DisplacementField, Field3, Velocity, VelocityField};
pub use integrate::{integrate_ss, DEFAULT_STEPS};
pub use jacobian::{folding_fraction, jacobian_det, jacobian_determinants, min_jacobian};
pub use velocity::{Noise, VelocityDistribution};

use crate::error::Result;

/// `outer ∘ inner` as displacement fields.
pub fn compose(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    DisplacementField::compose(outer, inner)
}

pub fn affine_to_displacement(aff: &AffineParams, dims: crate::volume::Dims) -> Result<DisplacementField> {
    aff.to_displacement(dims)
}
