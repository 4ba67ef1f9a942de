//! Per-pair minimization of the registration objective: an affine stage
//! followed by a cascade of dense velocity blocks.

mod adam;
mod affine;
mod cascade;
mod config;
mod dense;
mod state;

pub use adam::Adam;
pub use affine::{from_normalized, optimize_affine, to_normalized, AffineObjective, AffineOutcome};
pub use cascade::{optimize_cascade, FOLDING_MARGIN};
pub use config::OptimizerConfig;
pub use dense::optimize_dense_block;
pub use state::{BlockParams, CascadeState, Mode};


/// Loss recorded at every iteration of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: String,
    pub losses: Vec<f64>,
}

impl StageTrace {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn min(&self) -> Option<f64> {
        self.losses.iter().copied().reduce(f64::min)
    }

    /// Means of consecutive non-overlapping windows of `len` iterations.
    pub fn window_means(&self, len: usize) -> Vec<f64> {
        self.losses
            .chunks(len.max(1))
            .filter(|c| c.len() == len.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Whether every window mean is at most the one before it.
    pub fn windows_non_increasing(&self, len: usize) -> bool {
        self.window_means(len).windows(2).all(|w| w[1] <= w[0])
    }
}
