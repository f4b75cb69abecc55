//! Scenario descriptions for the three model families and the registry of
//! named scenarios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    GLM,
    FA,
    GMM,
}

/// Prior on each regression coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoeffPrior {
    /// `beta_j ~ N(0, var)` independent of the noise variance.
    Normal { var: f64 },
    /// `beta_j | sigma^2 ~ N(0, var * sigma^2)`, the Normal-Inverse-Gamma prior.
    ConjugateNormal { var: f64 },
    Laplace { scale: f64 },
    /// Positive coefficients, `beta_j ~ Ga(shape, rate)`.
    Gamma { shape: f64, rate: f64 },
}

/// Prior on the observation noise variance (GLM) or component variances (GMM).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoisePrior {
    InverseGamma { shape: f64, scale: f64 },
    /// Variance treated as known; it is not part of the latent vector.
    Known { variance: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Response {
    Gaussian,
    Bernoulli,
    GammaResponse,
}

/// Prior family for factor loadings and factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorPrior {
    Normal { var: f64 },
    Laplace { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaPriors {
    pub mu_var: f64,
    pub psi_shape: f64,
    pub psi_scale: f64,
    pub w_prior: FactorPrior,
    pub z_prior: FactorPrior,
}

impl Default for FaPriors {
    fn default() -> Self {
        Self {
            mu_var: 1.0,
            psi_shape: 5.0,
            psi_scale: 1.0,
            w_prior: FactorPrior::Normal { var: 1.0 },
            z_prior: FactorPrior::Normal { var: 1.0 },
        }
    }
}

/// Where GLM covariates come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CovariateSource {
    StdNormal,
    /// Correlation drawn per dataset from a normalized Wishart with `df`
    /// degrees of freedom. `df = inf` gives the identity.
    CorrelatedNormal { df: f64 },
    /// Standard-normal inputs pushed through a random tanh network, then
    /// column-standardized.
    RandomFeatureMap { depth: usize, width: usize },
}

/// One probabilistic program. Only the field group selected by `family` is
/// read; the others are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub family: Family,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub has_intercept: bool,
    pub coeff_prior: CoeffPrior,
    pub intercept_prior_var: f64,
    pub noise_prior: Option<NoisePrior>,
    pub response: Response,
    #[serde(rename = "P")]
    pub obs_dim: usize,
    pub z_dim: usize,
    pub fa_priors: FaPriors,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub dirichlet_alpha: f64,
    pub lambda_mean_scale: f64,
    pub covariate_source: CovariateSource,
}

const IG_5_2: NoisePrior = NoisePrior::InverseGamma { shape: 5.0, scale: 2.0 };

impl ScenarioConfig {
    fn base(family: Family) -> Self {
        Self {
            family,
            k: 50,
            p: 5,
            has_intercept: false,
            coeff_prior: CoeffPrior::Normal { var: 1.0 },
            intercept_prior_var: 9.0,
            noise_prior: Some(IG_5_2),
            response: Response::Gaussian,
            obs_dim: 3,
            z_dim: 3,
            fa_priors: FaPriors::default(),
            m: 1,
            l: 1,
            dirichlet_alpha: 1.0,
            lambda_mean_scale: 3.0,
            covariate_source: CovariateSource::StdNormal,
        }
    }

    /// GLM scenario `n` (1..=7).
    pub fn glm(n: usize) -> Result<Self> {
        let mut c = Self::base(Family::GLM);
        match n {
            1 => c.coeff_prior = CoeffPrior::ConjugateNormal { var: 1.0 },
            2 => c.has_intercept = true,
            3 => c.coeff_prior = CoeffPrior::Laplace { scale: 1.0 },
            4 => {
                c.coeff_prior = CoeffPrior::Laplace { scale: 1.0 };
                c.has_intercept = true;
            }
            5 => c.coeff_prior = CoeffPrior::Gamma { shape: 1.0, rate: 1.0 },
            6 => {
                c.noise_prior = None;
                c.response = Response::Bernoulli;
            }
            7 => c.response = Response::GammaResponse,
            _ => return Err(Error::Config(format!("no GLM scenario {n}"))),
        }
        Ok(c)
    }

    /// FA scenario `n` (1..=6).
    pub fn fa(n: usize) -> Result<Self> {
        use FactorPrior::*;
        let mut c = Self::base(Family::FA);
        let (k, p, mu_var, psi_scale, w, z, zd) = match n {
            1 => (50, 3, 1.0, 1.0, Normal { var: 1.0 }, Normal { var: 1.0 }, 3),
            2 => (50, 3, 0.1, 1.0, Laplace { scale: 10.0 }, Normal { var: 1.0 }, 3),
            3 => (25, 5, 0.1, 2.0, Normal { var: 3.0 }, Normal { var: 1.0 }, 3),
            4 => (25, 15, 0.1, 2.0, Normal { var: 3.0 }, Normal { var: 1.0 }, 5),
            5 => (25, 5, 0.1, 2.0, Laplace { scale: 3.0 }, Normal { var: 1.0 }, 3),
            6 => (25, 5, 0.1, 2.0, Normal { var: 3.0 }, Laplace { scale: 1.0 }, 3),
            _ => return Err(Error::Config(format!("no FA scenario {n}"))),
        };
        c.k = k;
        c.obs_dim = p;
        c.z_dim = zd;
        c.fa_priors = FaPriors { mu_var, psi_shape: 5.0, psi_scale, w_prior: w, z_prior: z };
        c.noise_prior = None;
        Ok(c)
    }

    /// GMM scenario `n` (1..=4).
    pub fn gmm(n: usize) -> Result<Self> {
        let mut c = Self::base(Family::GMM);
        let (k, m, l, alpha, lambda) = match n {
            1 => (50, 5, 1, 1.0, 3.0),
            2 => (25, 3, 3, 1.0, 3.0),
            3 => (50, 3, 5, 0.5, 5.0),
            4 => (50, 3, 3, 1.0, 3.0),
            _ => return Err(Error::Config(format!("no GMM scenario {n}"))),
        };
        c.k = k;
        c.m = m;
        c.l = l;
        c.dirichlet_alpha = alpha;
        c.lambda_mean_scale = lambda;
        Ok(c)
    }

    /// Look up a scenario by id: `glm-1`..`glm-7`, `fa-1`..`fa-6`,
    /// `gmm-1`..`gmm-4`, plus the desk-scale `glm-1-mini` (p = 2, K = 20) and
    /// `gmm-bimodal` (two 1-D components, K = 40).
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "glm-1-mini" => {
                let mut c = Self::glm(1)?;
                c.p = 2;
                c.k = 20;
                return Ok(c);
            }
            "gmm-bimodal" => {
                let mut c = Self::gmm(1)?;
                c.k = 40;
                c.m = 2;
                return Ok(c);
            }
            _ => {}
        }
        let unknown = || Error::Config(format!("unknown scenario id `{id}`"));
        let (family, num) = id.split_once('-').ok_or_else(unknown)?;
        let n: usize = num.parse().map_err(|_| unknown())?;
        match family {
            "glm" => Self::glm(n),
            "fa" => Self::fa(n),
            "gmm" => Self::gmm(n),
            _ => Err(unknown()),
        }
        .map_err(|_| unknown())
    }

    /// Every registered id.
    pub fn ids() -> Vec<String> {
        let mut ids: Vec<String> = (1..=7).map(|i| format!("glm-{i}")).collect();
        ids.extend((1..=6).map(|i| format!("fa-{i}")));
        ids.extend((1..=4).map(|i| format!("gmm-{i}")));
        ids.push("glm-1-mini".into());
        ids.push("gmm-bimodal".into());
        ids
    }

    /// Width of one dataset row.
    pub fn row_width(&self) -> usize {
        match self.family {
            Family::GLM => self.p + 1,
            Family::FA => self.obs_dim,
            Family::GMM => self.l,
        }
    }

    /// The inverse-gamma noise prior, if the variance is a latent.
    pub fn ig_noise(&self) -> Option<(f64, f64)> {
        match self.noise_prior {
            Some(NoisePrior::InverseGamma { shape, scale }) => Some((shape, scale)),
            _ => None,
        }
    }

    /// Check every field the family reads. All problems are reported at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut pos = |name: &str, v: f64| {
            if !(v > 0.0) || v.is_nan() {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        };
        let mut counts = Vec::new();
        counts.push(("K", self.k));
        match self.family {
            Family::GLM => {
                counts.push(("p", self.p));
                match self.coeff_prior {
                    CoeffPrior::Normal { var } | CoeffPrior::ConjugateNormal { var } => pos("coeff_prior.var", var),
                    CoeffPrior::Laplace { scale } => pos("coeff_prior.scale", scale),
                    CoeffPrior::Gamma { shape, rate } => {
                        pos("coeff_prior.shape", shape);
                        pos("coeff_prior.rate", rate);
                    }
                }
                if self.has_intercept {
                    pos("intercept_prior_var", self.intercept_prior_var);
                }
                match self.noise_prior {
                    Some(NoisePrior::InverseGamma { shape, scale }) => {
                        pos("noise_prior.shape", shape);
                        pos("noise_prior.scale", scale);
                    }
                    Some(NoisePrior::Known { variance }) => pos("noise_prior.variance", variance),
                    None => {}
                }
                match (self.response, &self.noise_prior) {
                    (Response::Bernoulli, _) => {}
                    (_, None) => problems.push("Gaussian and gamma responses need a noise_prior".into()),
                    _ => {}
                }
                if matches!(self.coeff_prior, CoeffPrior::ConjugateNormal { .. }) && self.noise_prior.is_none() {
                    problems.push("ConjugateNormal coefficient prior needs a noise_prior".into());
                }
            }
            Family::FA => {
                counts.push(("P", self.obs_dim));
                counts.push(("z_dim", self.z_dim));
                let f = &self.fa_priors;
                pos("fa_priors.mu_var", f.mu_var);
                pos("fa_priors.psi_shape", f.psi_shape);
                pos("fa_priors.psi_scale", f.psi_scale);
                for (name, prior) in [("w_prior", f.w_prior), ("z_prior", f.z_prior)] {
                    match prior {
                        FactorPrior::Normal { var } => pos(&format!("fa_priors.{name}.var"), var),
                        FactorPrior::Laplace { scale } => pos(&format!("fa_priors.{name}.scale"), scale),
                    }
                }
                if self.z_dim > self.obs_dim {
                    problems.push(format!("z_dim ({}) must not exceed P ({})", self.z_dim, self.obs_dim));
                }
            }
            Family::GMM => {
                counts.push(("M", self.m));
                counts.push(("L", self.l));
                pos("dirichlet_alpha", self.dirichlet_alpha);
                pos("lambda_mean_scale", self.lambda_mean_scale);
                match self.noise_prior {
                    Some(NoisePrior::InverseGamma { shape, scale }) => {
                        pos("noise_prior.shape", shape);
                        pos("noise_prior.scale", scale);
                    }
                    _ => problems.push("GMM needs an InverseGamma noise_prior for component variances".into()),
                }
            }
        }
        if self.family == Family::GLM {
            if let CovariateSource::CorrelatedNormal { df } = self.covariate_source {
                if !(df > self.p as f64 - 1.0) {
                    problems.push(format!("CorrelatedNormal df must exceed p - 1, got {df}"));
                }
            }
            if let CovariateSource::RandomFeatureMap { depth, width } = self.covariate_source {
                counts.push(("covariate_source.depth", depth));
                counts.push(("covariate_source.width", width));
            }
        }
        for (name, v) in counts {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
