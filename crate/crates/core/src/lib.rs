//! Atlas-based segmentation by cascaded diffeomorphic registration.
//!
//! An atlas image with labelled structures is registered onto a patient
//! image, first by an affine map, then by a cascade of stationary velocity
//! fields integrated with scaling and squaring. The atlas labels are carried
//! through the composed deformation to segment the patient.

pub mod error;
pub mod io;
pub mod losses;
pub mod optimizer;
pub mod phantom;
pub mod pipeline;
pub mod transform;
pub mod volume;

pub use error::{Error, FormatError, Result};
pub use optimizer::{optimize_cascade, CascadeState, Mode, OptimizerConfig};
pub use pipeline::{dice, propagate_labels, register, MetricsTable, RegistrationResult};
pub use transform::{AffineParams, DisplacementField, VelocityDistribution, VelocityField};
pub use volume::{Dims, LabelVolume, Volume3};
