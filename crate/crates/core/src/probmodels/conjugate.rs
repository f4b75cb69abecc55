//! Closed-form posteriors for the conjugate linear-Gaussian regressions.
//!
//! With `beta | sigma^2 ~ N(0, v sigma^2 I)` and `sigma^2 ~ IG(a0, b0)` the
//! posterior is Normal-Inverse-Gamma:
//! `V_n = (I / v + U^T U)^-1`, `m_n = V_n U^T y`, `a_n = a0 + K / 2`,
//! `b_n = b0 + (y^T y - m_n^T V_n^-1 m_n) / 2`.
//! With a known noise variance the coefficient posterior is Gaussian.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::config::{CoeffPrior, Family, NoisePrior, Response, ScenarioConfig};
use super::distributions::{std_normal, InverseGamma};
use super::ContextDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorKind {
    /// `sigma^2 ~ IG(a_n, b_n)`, `beta | sigma^2 ~ N(m_n, sigma^2 V_n)`.
    NormalInverseGamma { a_n: f64, b_n: f64 },
    /// `beta ~ N(m_n, V_n)`; the noise variance is fixed.
    Gaussian,
}

/// Exact posterior over the latent coordinates `(beta, [beta0], [log sigma^2])`.
#[derive(Clone, Debug)]
pub struct AnalyticPosterior {
    pub kind: PosteriorKind,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// Analytic posterior for any scenario that admits one.
pub fn analytic_posterior(cfg: &ScenarioConfig, data: &ContextDataset) -> Result<AnalyticPosterior> {
    if cfg.family != Family::GLM || cfg.response != Response::Gaussian {
        return Err(Error::Unsupported("analytic posterior needs a Gaussian-response GLM".into()));
    }
    match (cfg.coeff_prior, cfg.noise_prior) {
        (CoeffPrior::ConjugateNormal { var }, Some(NoisePrior::InverseGamma { shape, scale })) => {
            if cfg.has_intercept {
                return Err(Error::Unsupported("intercept with an unscaled prior breaks conjugacy".into()));
            }
            analytic_posterior_nig(data, var, shape, scale)
        }
        (CoeffPrior::Normal { var } | CoeffPrior::ConjugateNormal { var }, Some(NoisePrior::Known { variance })) => {
            let scaled = matches!(cfg.coeff_prior, CoeffPrior::ConjugateNormal { .. });
            let mut prior_var = vec![if scaled { var * variance } else { var }; cfg.p];
            if cfg.has_intercept {
                prior_var.push(cfg.intercept_prior_var);
            }
            gaussian_posterior(data, cfg.p, cfg.has_intercept, &prior_var, variance)
        }
        _ => Err(Error::Unsupported(format!(
            "no closed form for prior {:?} with noise {:?}",
            cfg.coeff_prior, cfg.noise_prior
        ))),
    }
}

fn design(data: &ContextDataset, p: usize, intercept: bool) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if data.width() != p + 1 {
        return Err(Error::Dimension(format!("expected rows of width {}, got {}", p + 1, data.width())));
    }
    let k = data.k();
    let cols = p + intercept as usize;
    let u = DMatrix::from_fn(k, cols, |r, c| if c < p { data.rows.get(r, c) } else { 1.0 });
    let y = DVector::from_fn(k, |r, _| data.rows.get(r, p));
    Ok((u, y))
}

fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(m)
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Domain("posterior precision is not positive definite".into()))
}

/// Normal-Inverse-Gamma posterior for prior `beta | sigma^2 ~ N(0, var sigma^2 I)`,
/// `sigma^2 ~ IG(shape, scale)`.
pub fn analytic_posterior_nig(data: &ContextDataset, var: f64, shape: f64, scale: f64) -> Result<AnalyticPosterior> {
    let p = data.width().checked_sub(1).ok_or_else(|| Error::Dimension("empty rows".into()))?;
    let (u, y) = design(data, p, false)?;
    let prec = DMatrix::identity(p, p) / var + u.transpose() * &u;
    let v_n = spd_inverse(prec.clone())?;
    let m_n = &v_n * (u.transpose() * &y);
    let a_n = shape + data.k() as f64 / 2.0;
    let b_n = scale + 0.5 * (y.dot(&y) - m_n.dot(&(&prec * &m_n)));
    if !(b_n > 0.0) {
        return Err(Error::Domain(format!("posterior scale b_n = {b_n}")));
    }
    let chol = Cholesky::new(v_n.clone()).ok_or_else(|| Error::Domain("V_n not positive definite".into()))?;
    Ok(AnalyticPosterior { kind: PosteriorKind::NormalInverseGamma { a_n, b_n }, mean: m_n, cov: v_n, chol })
}

fn gaussian_posterior(
    data: &ContextDataset,
    p: usize,
    intercept: bool,
    prior_var: &[f64],
    noise: f64,
) -> Result<AnalyticPosterior> {
    let (u, y) = design(data, p, intercept)?;
    let prior_prec = DMatrix::from_diagonal(&DVector::from_iterator(prior_var.len(), prior_var.iter().map(|v| 1.0 / v)));
    let prec = prior_prec + u.transpose() * &u / noise;
    let cov = spd_inverse(prec)?;
    let mean = &cov * (u.transpose() * &y) / noise;
    let chol = Cholesky::new(cov.clone()).ok_or_else(|| Error::Domain("posterior covariance not positive definite".into()))?;
    Ok(AnalyticPosterior { kind: PosteriorKind::Gaussian, mean, cov, chol })
}

impl AnalyticPosterior {
    /// Gaussian posterior with the given mean and covariance.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!("mean of length {} with a {}x{} covariance", mean.len(), cov.nrows(), cov.ncols())));
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| Error::Domain("covariance not positive definite".into()))?;
        Ok(Self { kind: PosteriorKind::Gaussian, mean, cov, chol })
    }

    /// Number of coefficients (including an intercept, if any).
    pub fn n_coeffs(&self) -> usize {
        self.mean.len()
    }

    /// Dimension of the latent vector.
    pub fn dim(&self) -> usize {
        match self.kind {
            PosteriorKind::NormalInverseGamma { .. } => self.n_coeffs() + 1,
            PosteriorKind::Gaussian => self.n_coeffs(),
        }
    }

    /// Marginal of `sigma^2`.
    pub fn sigma2_marginal(&self) -> Option<InverseGamma> {
        match self.kind {
            PosteriorKind::NormalInverseGamma { a_n, b_n } => InverseGamma::new(a_n, b_n).ok(),
            PosteriorKind::Gaussian => None,
        }
    }

    /// Mean and covariance of the coefficient marginal. Under NIG this is a
    /// multivariate t with `2 a_n` degrees of freedom and shape `(b_n / a_n) V_n`.
    pub fn coeff_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self.kind {
            PosteriorKind::NormalInverseGamma { a_n, b_n } => (self.mean.clone(), &self.cov * (b_n / (a_n - 1.0))),
            PosteriorKind::Gaussian => (self.mean.clone(), self.cov.clone()),
        }
    }

    /// One draw in latent coordinates.
    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n_coeffs();
        let eps = DVector::from_fn(n, |_, _| std_normal(rng));
        let dev = self.chol.l() * eps;
        match self.kind {
            PosteriorKind::NormalInverseGamma { a_n, b_n } => {
                let s2 = InverseGamma::new(a_n, b_n).expect("checked at construction").sample(rng);
                let mut out: Vec<f64> = (0..n).map(|i| self.mean[i] + s2.sqrt() * dev[i]).collect();
                out.push(s2.ln());
                out
            }
            PosteriorKind::Gaussian => (0..n).map(|i| self.mean[i] + dev[i]).collect(),
        }
    }

    /// `n` draws as rows of a matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(n, self.dim());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&self.sample_latent(rng));
        }
        out
    }

    /// Normalized log-density in latent coordinates (including the Jacobian
    /// of the log transform on `sigma^2`).
    pub fn ln_pdf_latent(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::Dimension(format!("expected {} coordinates, got {}", self.dim(), z.len())));
        }
        let n = self.n_coeffs();
        let r = DVector::from_fn(n, |i, _| z[i] - self.mean[i]);
        let w = self.chol.l().solve_lower_triangular(&r).expect("triangular factor is nonsingular");
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum();
        match self.kind {
            PosteriorKind::NormalInverseGamma { a_n, b_n } => {
                let s = z[n];
                let ig = a_n * b_n.ln() - ln_gamma(a_n) - a_n * s - b_n * (-s).exp();
                let normal = -0.5 * n as f64 * (LN_2PI + s) - log_det - 0.5 * w.norm_squared() * (-s).exp();
                Ok(ig + normal)
            }
            PosteriorKind::Gaussian => Ok(-0.5 * n as f64 * LN_2PI - log_det - 0.5 * w.norm_squared()),
        }
    }

    /// Posterior mode in latent coordinates.
    pub fn mode_latent(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.mean.iter().copied().collect();
        if let PosteriorKind::NormalInverseGamma { a_n, b_n } = self.kind {
            out.push((b_n / (a_n + self.n_coeffs() as f64 / 2.0)).ln());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodels::{log_joint, sample_glm_dataset};
    use crate::rng::seeded;
    use rand::Rng;

    fn check_proportional(cfg: &ScenarioConfig, seed: u64) {
        let mut rng = seeded(seed);
        let (data, latent) = sample_glm_dataset(cfg, &mut rng).unwrap();
        let post = analytic_posterior(cfg, &data).unwrap();
        let mut diffs = Vec::new();
        for _ in 0..20 {
            let z: Vec<f64> = latent.values.iter().map(|v| v + 0.3 * (rng.random::<f64>() - 0.5)).collect();
            let (lj, _) = log_joint(cfg, &data, &z).unwrap();
            diffs.push(post.ln_pdf_latent(&z).unwrap() - lj);
        }
        let spread = diffs.iter().cloned().fold(f64::MIN, f64::max) - diffs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-9, "log posterior minus log joint varies by {spread}");
    }

    #[test]
    fn nig_posterior_is_proportional_to_the_log_joint() {
        check_proportional(&ScenarioConfig::glm(1).unwrap(), 1);
        check_proportional(&ScenarioConfig::by_id("glm-1-mini").unwrap(), 2);
    }

    #[test]
    fn known_noise_posterior_is_proportional_to_the_log_joint() {
        let mut cfg = ScenarioConfig::glm(2).unwrap();
        cfg.noise_prior = Some(NoisePrior::Known { variance: 0.7 });
        check_proportional(&cfg, 3);
    }

    #[test]
    fn density_integrates_to_one_in_one_dimension() {
        let mut cfg = ScenarioConfig::glm(1).unwrap();
        cfg.p = 1;
        cfg.k = 8;
        let (data, _) = sample_glm_dataset(&cfg, &mut seeded(4)).unwrap();
        let post = analytic_posterior(&cfg, &data).unwrap();
        let (mut total, h) = (0.0, 0.01);
        let mode = post.mode_latent();
        let mut b = mode[0] - 6.0;
        while b < mode[0] + 6.0 {
            let mut s = mode[1] - 6.0;
            while s < mode[1] + 6.0 {
                total += post.ln_pdf_latent(&[b, s]).unwrap().exp() * h * h;
                s += h;
            }
            b += h;
        }
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
    }

    #[test]
    fn samples_match_closed_form_moments() {
        let cfg = ScenarioConfig::glm(1).unwrap();
        let mut rng = seeded(9);
        let (data, _) = sample_glm_dataset(&cfg, &mut rng).unwrap();
        let post = analytic_posterior(&cfg, &data).unwrap();
        let n = 200_000;
        let draws = post.sample(n, &mut rng);
        let (mean, cov) = post.coeff_moments();
        for j in 0..cfg.p {
            let col = draws.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let se = (cov[(j, j)] / n as f64).sqrt();
            assert!((m - mean[j]).abs() < 4.0 * se, "coordinate {j}: {m} vs {}", mean[j]);
        }
        let ig = post.sigma2_marginal().unwrap();
        let s2: Vec<f64> = draws.column(cfg.p).iter().map(|s| s.exp()).collect();
        let m = s2.iter().sum::<f64>() / n as f64;
        assert!((m - ig.mean()).abs() < 4.0 * (ig.variance() / n as f64).sqrt());
    }

    #[test]
    fn mode_is_stationary() {
        let cfg = ScenarioConfig::glm(1).unwrap();
        let (data, _) = sample_glm_dataset(&cfg, &mut seeded(12)).unwrap();
        let post = analytic_posterior(&cfg, &data).unwrap();
        let (_, g) = log_joint(&cfg, &data, &post.mode_latent()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn non_conjugate_scenarios_are_unsupported() {
        for id in ["glm-3", "glm-5", "glm-6", "fa-1", "gmm-1"] {
            let cfg = ScenarioConfig::by_id(id).unwrap();
            let data = ContextDataset::new(Matrix::zeros(2, cfg.row_width()), cfg.family);
            assert!(matches!(analytic_posterior(&cfg, &data), Err(Error::Unsupported(_))), "{id}");
        }
    }
}
