//! Probability paths, training objectives and the optimizer loop.

pub mod objective;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use objective::{example_loss, loss_and_grad, make_training_example, Example};
pub use train::{lr_at, train, LogRow, TrainLog, TrainOptions, TrainerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Conditional flow matching on the straight-line path.
    #[serde(rename = "ot-fm")]
    OtFm,
    /// Flow matching on the variance-preserving path.
    #[serde(rename = "vp-fm")]
    VpFm,
    /// Denoising score matching on the variance-preserving path.
    #[serde(rename = "vp-sm")]
    VpSm,
    /// Gaussian posterior fitted by maximum likelihood (forward KL).
    #[serde(rename = "gaussian")]
    Gaussian,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot-fm" => Ok(Self::OtFm),
            "vp-fm" => Ok(Self::VpFm),
            "vp-sm" => Ok(Self::VpSm),
            "gaussian" => Ok(Self::Gaussian),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected ot-fm, vp-fm, vp-sm or gaussian)"))),
        }
    }
}

/// Linear `beta(s)` schedule of the variance-preserving path, in diffusion
/// time `s = 1 - t` (data at `s = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    /// Flow time is restricted to `[0, 1 - eps]` where the path std is nonzero.
    pub eps: f64,
}

impl Default for VpSchedule {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 20.0, eps: 1e-3 }
    }
}

impl VpSchedule {
    pub fn beta(&self, s: f64) -> f64 {
        self.beta_min + s * (self.beta_max - self.beta_min)
    }

    fn integral(&self, s: f64) -> f64 {
        self.beta_min * s + 0.5 * s * s * (self.beta_max - self.beta_min)
    }

    /// Mean coefficient `alpha(s)` and std `sigma(s)` of the path at diffusion time `s`.
    pub fn coeffs(&self, s: f64) -> (f64, f64) {
        let a = (-0.5 * self.integral(s)).exp();
        (a, (-(-self.integral(s)).exp_m1()).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub sigma_min: f64,
    pub objective: Objective,
    #[serde(default)]
    pub vp: VpSchedule,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { sigma_min: 1e-4, objective: Objective::OtFm, vp: VpSchedule::default() }
    }
}

impl FlowConfig {
    pub fn with_objective(objective: Objective) -> Self {
        Self { objective, ..Self::default() }
    }

    pub fn omega(&self) -> f64 {
        1.0 - self.sigma_min
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            problems.push(format!("sigma_min must be in (0, 1), got {}", self.sigma_min));
        }
        let vp = self.vp;
        if !(vp.beta_min > 0.0 && vp.beta_max >= vp.beta_min) {
            problems.push(format!("VP schedule needs 0 < beta_min <= beta_max, got {} and {}", vp.beta_min, vp.beta_max));
        }
        if !(vp.eps > 0.0 && vp.eps < 1.0) {
            problems.push(format!("VP eps must be in (0, 1), got {}", vp.eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Upper end of the training and integration time range.
    pub fn t_max(&self) -> f64 {
        match self.objective {
            Objective::VpFm | Objective::VpSm => 1.0 - self.vp.eps,
            _ => 1.0,
        }
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())))
    }
}

/// `(1 - omega t) z0 + t z1`.
pub fn conditional_path(z0: &[f64], z1: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    same_len(z0, z1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, 1]")));
    }
    let w = cfg.omega();
    Ok(z0.iter().zip(z1).map(|(a, b)| (1.0 - w * t) * a + t * b).collect())
}

/// `z1 - omega z0`.
pub fn cfm_target(z0: &[f64], z1: &[f64], cfg: &FlowConfig) -> Result<Vec<f64>> {
    same_len(z0, z1)?;
    let w = cfg.omega();
    Ok(z0.iter().zip(z1).map(|(a, b)| b - w * a).collect())
}

/// Point on the VP path at flow time `t`: `alpha(1-t) z1 + sigma(1-t) z0`.
pub fn vp_path(z0: &[f64], z1: &[f64], t: f64, vp: &VpSchedule) -> Result<Vec<f64>> {
    same_len(z0, z1)?;
    let (a, s) = vp.coeffs(1.0 - t);
    Ok(z0.iter().zip(z1).map(|(x0, x1)| a * x1 + s * x0).collect())
}

/// Flow-time velocity of the VP path: `(beta/2) (alpha z1 - alpha^2 / sigma z0)`.
pub fn vp_target(z0: &[f64], z1: &[f64], t: f64, vp: &VpSchedule) -> Result<Vec<f64>> {
    same_len(z0, z1)?;
    let s = 1.0 - t;
    let (a, sd) = vp.coeffs(s);
    let b = vp.beta(s);
    Ok(z0.iter().zip(z1).map(|(x0, x1)| 0.5 * b * (a * x1 - a * a / sd * x0)).collect())
}
