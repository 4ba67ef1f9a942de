//! Scaling and squaring: the unit-time flow of a stationary velocity field.

use crate::transform::field::{DisplacementField, VelocityField};

/// Default number of squarings (2^8 effective sub-steps).
pub const DEFAULT_STEPS: u32 = 8;

/// Computes `exp(v)` as a displacement.
///
/// Starts from `u = v / 2^steps` and squares the map `steps` times,
/// `phi <- phi ∘ phi`. Out-of-grid lookups clamp to the boundary.
pub fn integrate_ss(v: &VelocityField, steps: u32) -> DisplacementField {
    let scale = 0.5f64.powi(steps as i32);
    let mut u: DisplacementField = v.scaled(scale).cast();
    for _ in 0..steps {
        u = DisplacementField::compose(&u, &u).expect("self-composition shares dims");
    }
    u
}
