use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{KlConfig, LossWeights, MiConfig, ObjectiveConfig};
use crate::optimizer::Mode;

/// Every knob of a registration run. Loaded from TOML; absent keys keep their defaults.
///
/// ```toml
/// mode = "generative"
/// blocks = 2
/// learning_rate = 0.05
/// dense_iterations = 150
///
/// [weights]
/// segmentation = 4.0
/// ```
#[derive(Debug, Clone, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Step size for velocity parameters, in voxels per iteration.
    pub learning_rate: f64,
    /// Step size for the affine parameters in normalized grid coordinates.
    pub affine_learning_rate: f64,
    /// Iterations at the coarsest affine level; each finer level runs a quarter as many.
    pub affine_iterations: usize,
    /// Number of affine pyramid levels (1 = full resolution only).
    pub affine_levels: usize,
    /// Iterations per dense block.
    pub dense_iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Central-difference step for the affine gradient.
    pub fd_step: f64,
    /// Fraction of the initial step size left at the last iteration of a stage.
    pub final_lr_fraction: f64,
    pub smoothing_sigma: f64,
    pub steps: u32,
    pub seed: u64,
    pub mode: Mode,
    pub blocks: usize,
    pub log_var_init: f64,
    pub weights: LossWeights,
    pub mi_bins: usize,
    pub kl_lambda: f64,
    /// Kernel bandwidth of the MMD term; absent selects the median heuristic.
    pub mmd_bandwidth: Option<f64>,
    pub mmd_samples: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            affine_learning_rate: 0.01,
            affine_iterations: 120,
            affine_levels: 3,
            dense_iterations: 150,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            fd_step: 1e-3,
            final_lr_fraction: 0.1,
            smoothing_sigma: 2.0,
            steps: crate::transform::DEFAULT_STEPS,
            seed: 0,
            mode: Mode::Generative,
            blocks: 2,
            log_var_init: -10.0,
            weights: LossWeights::default(),
            mi_bins: 32,
            kl_lambda: KlConfig::default().lambda,
            mmd_bandwidth: None,
            mmd_samples: 256,
        }
    }
}

impl OptimizerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.learning_rate > 0.0) || !(self.affine_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.affine_levels == 0 {
            return bad("affine_levels must be at least 1");
        }
        if self.blocks == 0 {
            return bad("at least one dense block is required");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        if !(self.smoothing_sigma >= 0.0) || !self.log_var_init.is_finite() || !(self.kl_lambda > 0.0) {
            return bad("smoothing_sigma must be non-negative, log_var_init finite, kl_lambda positive");
        }
        if self.mmd_bandwidth.is_some_and(|h| !(h > 0.0)) || self.mmd_samples < 2 {
            return bad("mmd_bandwidth must be positive and mmd_samples at least 2");
        }
        self.weights.validate()?;
        self.mi().validate()
    }

    pub fn mi(&self) -> MiConfig {
        MiConfig::with_bins(self.mi_bins)
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            weights: self.weights,
            mi: self.mi(),
            kl: KlConfig { lambda: self.kl_lambda },
            mmd_bandwidth: self.mmd_bandwidth,
            mmd_samples: self.mmd_samples,
        }
    }

    /// Linearly decayed step size for iteration `k` of `n`.
    pub(crate) fn scheduled(&self, lr: f64, k: usize, n: usize) -> f64 {
        if n <= 1 {
            return lr;
        }
        let t = k as f64 / (n - 1) as f64;
        lr * (1.0 - (1.0 - self.final_lr_fraction) * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        OptimizerConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_overrides_and_round_trips() {
        let cfg = OptimizerConfig::from_toml_str(
            "mode = \"non-generative\"\nblocks = 1\nseed = 7\nmmd_bandwidth = 0.5\n[weights]\nsegmentation = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::NonGenerative);
        assert_eq!(cfg.blocks, 1);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mmd_bandwidth, Some(0.5));
        assert_eq!(cfg.weights.segmentation, 0.0);
        assert_eq!(cfg.weights.recon_diff, LossWeights::default().recon_diff);
        let again = OptimizerConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(OptimizerConfig::from_toml_str("learning_rat = 1.0").is_err());
        assert!(OptimizerConfig::from_toml_str("learning_rate = -1.0").is_err());
        assert!(OptimizerConfig::from_toml_str("blocks = 0").is_err());
        assert!(OptimizerConfig::from_toml_str("mode = \"vae\"").is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.scheduled(1.0, 0, 11), 1.0);
        assert!((cfg.scheduled(1.0, 10, 11) - 0.1).abs() < 1e-12);
    }
}
