use crate::error::Result;
use crate::transform::{compose, integrate_ss, AffineParams, DisplacementField, VelocityDistribution, VelocityField};
use crate::volume::Dims;

/// Parameterization and regularizer of the dense blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Gaussian velocity posterior, KL against the Laplacian prior.
    #[default]
    Generative,
    /// Velocity optimized directly, smoothness penalty on the displacement.
    NonGenerative,
    /// Gaussian velocity posterior, MMD against a unit Gaussian.
    InfoVae,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "generative" => Ok(Mode::Generative),
            "non-generative" => Ok(Mode::NonGenerative),
            "info-vae" => Ok(Mode::InfoVae),
            other => Err(format!("unknown mode `{other}` (generative, non-generative, info-vae)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    Generative(VelocityDistribution),
    InfoVae(VelocityDistribution),
    Deterministic(VelocityField),
}

impl BlockParams {
    pub fn identity(dims: Dims, mode: Mode, log_var_init: f64) -> Result<Self> {
        Ok(match mode {
            Mode::Generative => BlockParams::Generative(VelocityDistribution::constant(dims, log_var_init)?),
            Mode::InfoVae => BlockParams::InfoVae(VelocityDistribution::constant(dims, log_var_init)?),
            Mode::NonGenerative => BlockParams::Deterministic(VelocityField::zeros(dims)?),
        })
    }

    /// Velocity before smoothing: the mean for distributions.
    pub fn mean_velocity(&self) -> &VelocityField {
        match self {
            BlockParams::Generative(d) | BlockParams::InfoVae(d) => &d.mu,
            BlockParams::Deterministic(v) => v,
        }
    }

    pub fn distribution(&self) -> Option<&VelocityDistribution> {
        match self {
            BlockParams::Generative(d) | BlockParams::InfoVae(d) => Some(d),
            BlockParams::Deterministic(_) => None,
        }
    }
}

/// The fitted chain `φ_aff ∘ φ_1 ∘ … ∘ φ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub affine: AffineParams,
    pub blocks: Vec<BlockParams>,
    pub smoothing_sigma: f64,
    pub steps: u32,
}

impl CascadeState {
    pub fn identity(dims: Dims, n_blocks: usize, mode: Mode, log_var_init: f64, smoothing_sigma: f64, steps: u32) -> Result<Self> {
        let blocks = (0..n_blocks)
            .map(|_| BlockParams::identity(dims, mode, log_var_init))
            .collect::<Result<_>>()?;
        Ok(Self {
            affine: AffineParams::identity(),
            blocks,
            smoothing_sigma,
            steps,
        })
    }

    /// Smoothed deterministic velocity of block `k`.
    pub fn block_velocity(&self, k: usize) -> VelocityField {
        self.blocks[k].mean_velocity().gaussian_smooth(self.smoothing_sigma)
    }

    pub fn block_displacement(&self, k: usize) -> DisplacementField {
        integrate_ss(&self.block_velocity(k), self.steps)
    }

    pub fn block_displacements(&self) -> Vec<DisplacementField> {
        (0..self.blocks.len()).map(|k| self.block_displacement(k)).collect()
    }

    /// Composite displacements of every prefix: `[aff, aff∘φ_1, …, aff∘φ_1∘…∘φ_n]`.
    pub fn prefix_chain(&self, dims: Dims) -> Result<Vec<DisplacementField>> {
        let mut chain = vec![self.affine.to_displacement(dims)?];
        for d in self.block_displacements() {
            let next = compose(chain.last().unwrap(), &d)?;
            chain.push(next);
        }
        Ok(chain)
    }

    pub fn composed(&self, dims: Dims) -> Result<DisplacementField> {
        Ok(self.prefix_chain(dims)?.pop().unwrap())
    }
}
