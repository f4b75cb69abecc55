//! Probabilistic model families (GLM, factor analysis, Gaussian mixtures):
//! joint samplers, unconstrained log-joint densities, and the conjugate
//! analytic posterior.

pub mod config;
pub mod conjugate;
pub mod distributions;
pub mod generate;
pub mod layout;
pub mod logjoint;

use serde::{Deserialize, Serialize};

pub use config::{
    CoeffPrior, CovariateSource, FaPriors, FactorPrior, Family, NoisePrior, Response, ScenarioConfig,
};
pub use conjugate::{analytic_posterior, analytic_posterior_nig, AnalyticPosterior, PosteriorKind};
pub use generate::{
    sample_covariates, sample_dataset, sample_fa_dataset, sample_fa_dataset_with, sample_glm_dataset,
    sample_gmm_dataset, sample_with_target, FaOverrides,
};
pub use layout::{LatentLayout, LatentVector, Transform};
pub use logjoint::{log_joint, LogDensity, ScenarioTarget};

use crate::tensor::Matrix;

/// One observed dataset: `K` rows of width `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextDataset {
    pub rows: Matrix,
    pub family: Family,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
}

impl ContextDataset {
    pub fn new(rows: Matrix, family: Family) -> Self {
        Self { rows, family, scenario: None, seed: None }
    }

    pub fn k(&self) -> usize {
        self.rows.rows()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.is_finite()
    }
}

impl ScenarioConfig {
    /// Layout of the latent vector the in-context model targets.
    pub fn latent_layout(&self) -> LatentLayout {
        let mut l = LatentLayout::default();
        match self.family {
            Family::GLM => {
                let t = match self.coeff_prior {
                    CoeffPrior::Gamma { .. } => Transform::Log,
                    _ => Transform::Identity,
                };
                l.push("beta", self.p, t);
                if self.has_intercept {
                    l.push("beta0", 1, Transform::Identity);
                }
                if self.ig_noise().is_some() {
                    l.push("sigma2", 1, Transform::Log);
                }
            }
            Family::FA => {
                l.push("z", self.z_dim, Transform::Identity);
            }
            Family::GMM => {
                l.push("mu", self.m * self.l, Transform::Identity);
                l.push("sigma2", self.m * self.l, Transform::Log);
            }
        }
        l
    }

    /// Layout of the full unconstrained vector sampled by reference methods.
    /// The latent layout is always a prefix of it.
    pub fn target_layout(&self) -> LatentLayout {
        let mut l = self.latent_layout();
        match self.family {
            Family::GLM => {}
            Family::FA => {
                let (p, q) = (self.obs_dim, self.z_dim);
                l.push("mu", p, Transform::Identity)
                    .push("psi", p, Transform::Log)
                    .push("W", layout::lower_tri_len(p, q), Transform::AbsDiagLog { rows: p, cols: q });
            }
            Family::GMM => {
                l.push("phi", self.m - 1, Transform::SoftmaxAnchor);
            }
        }
        l
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_layout().dim()
    }
}
