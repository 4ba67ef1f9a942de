//! Terms of the registration objective.

pub mod kl;
pub mod mi;
pub mod objective;
pub mod regularizers;
pub mod similarity;

pub use kl::{kl_channel, kl_channel_gradient, kl_velocity_gradient, kl_velocity_loss, lattice_degree, KlConfig};
pub use mi::{mutual_information, self_information, MiConfig, ParzenMi};
pub use objective::{total_objective, LossWeights, ObjectiveBreakdown, ObjectiveConfig};
pub use regularizers::{median_bandwidth, mmd_loss, mmd_with_gradient, smoothness_gradient, smoothness_loss};
pub use similarity::{recon_affine_loss, recon_diff_loss, segmentation_sim_loss};
