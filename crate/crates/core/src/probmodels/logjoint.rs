//! Log-joint densities over the unconstrained target vector, with exact
//! gradients, for the reference inference methods.

use statrs::function::gamma::{digamma, ln_gamma};

use super::config::{CoeffPrior, FactorPrior, Family, NoisePrior, Response, ScenarioConfig};
use super::distributions::{InverseGamma, Laplace, Normal};
use super::layout::{lower_tri_indices, softmax_anchor};
use super::ContextDataset;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A differentiable unnormalized log-density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log-density at `x`; writes the gradient into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut g)
    }
}

/// `log p(x, T(z)) + log |det J_T(z)|` for a scenario and a fixed dataset.
#[derive(Clone, Debug)]
pub struct ScenarioTarget<'a> {
    pub cfg: &'a ScenarioConfig,
    pub data: &'a ContextDataset,
}

impl<'a> ScenarioTarget<'a> {
    pub fn new(cfg: &'a ScenarioConfig, data: &'a ContextDataset) -> Result<Self> {
        if data.family != cfg.family {
            return Err(Error::Config(format!(
                "dataset family {:?} does not match scenario family {:?}",
                data.family, cfg.family
            )));
        }
        if data.width() != cfg.row_width() {
            return Err(Error::Dimension(format!(
                "dataset rows have width {}, scenario expects {}",
                data.width(),
                cfg.row_width()
            )));
        }
        Ok(Self { cfg, data })
    }
}

impl LogDensity for ScenarioTarget<'_> {
    fn dim(&self) -> usize {
        self.cfg.target_layout().dim()
    }

    fn log_density_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.dim();
        if z.len() != d || grad.len() != d {
            return Err(Error::Dimension(format!("target expects {d} coordinates, got {}", z.len())));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lp = match self.cfg.family {
            Family::GLM => glm(self.cfg, self.data, z, grad)?,
            Family::FA => fa(self.cfg, self.data, z, grad)?,
            Family::GMM => gmm(self.cfg, self.data, z, grad)?,
        };
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::eval(format!("gradient[{i}]")));
        }
        Ok(lp)
    }
}

/// Log-joint and its gradient at the unconstrained point `z`.
pub fn log_joint(cfg: &ScenarioConfig, data: &ContextDataset, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let t = ScenarioTarget::new(cfg, data)?;
    let mut g = vec![0.0; t.dim()];
    let lp = t.log_density_grad(z, &mut g)?;
    Ok((lp, g))
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::eval(term))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn glm(cfg: &ScenarioConfig, data: &ContextDataset, z: &[f64], grad: &mut [f64]) -> Result<f64> {
    let p = cfg.p;
    let mut idx = p;
    let b0_idx = cfg.has_intercept.then(|| {
        idx += 1;
        idx - 1
    });
    let s_idx = cfg.ig_noise().map(|_| idx);
    let (sigma2, s) = match (cfg.noise_prior, s_idx) {
        (_, Some(i)) => (z[i].exp(), z[i]),
        (Some(NoisePrior::Known { variance }), None) => (variance, variance.ln()),
        _ => (1.0, 0.0),
    };

    // coefficients in constrained space
    let positive = matches!(cfg.coeff_prior, CoeffPrior::Gamma { .. });
    let beta: Vec<f64> = z[..p].iter().map(|&b| if positive { b.exp() } else { b }).collect();
    let beta0 = b0_idx.map_or(0.0, |i| z[i]);

    let mut prior = 0.0;
    // d(log p)/d(beta) in constrained space, and d/ds from the prior
    let mut dbeta = vec![0.0; p];
    let mut ds = 0.0;
    match cfg.coeff_prior {
        CoeffPrior::Normal { var } => {
            let n = Normal::new(0.0, var)?;
            for (j, &b) in beta.iter().enumerate() {
                prior += n.ln_pdf(b);
                dbeta[j] += n.d_ln_pdf(b);
            }
        }
        CoeffPrior::ConjugateNormal { var } => {
            let v = var * sigma2;
            for (j, &b) in beta.iter().enumerate() {
                prior += -0.5 * (LN_2PI + v.ln()) - 0.5 * b * b / v;
                dbeta[j] += -b / v;
                ds += -0.5 + 0.5 * b * b / v;
            }
        }
        CoeffPrior::Laplace { scale } => {
            let l = Laplace::new(0.0, scale)?;
            for (j, &b) in beta.iter().enumerate() {
                prior += l.ln_pdf(b);
                dbeta[j] += l.d_ln_pdf(b);
            }
        }
        CoeffPrior::Gamma { shape, rate } => {
            // density of log(beta) including Jacobian beta; gradient taken w.r.t. the log directly below
            for (j, &b) in beta.iter().enumerate() {
                prior += shape * rate.ln() - ln_gamma(shape) + shape * z[j] - rate * b;
                grad[j] += shape - rate * b;
            }
        }
    }
    if let Some(i) = b0_idx {
        let n = Normal::new(0.0, cfg.intercept_prior_var)?;
        prior += n.ln_pdf(beta0);
        grad[i] += n.d_ln_pdf(beta0);
    }
    if let Some((shape, scale)) = cfg.ig_noise() {
        let ig = InverseGamma::new(shape, scale)?;
        prior += ig.ln_pdf_log(s);
        ds += ig.d_ln_pdf_log(s);
    }
    finite("prior", prior)?;

    let mut lik = 0.0;
    let mut dbeta0 = 0.0;
    for row in data.rows.iter_rows() {
        let (u, y) = (&row[..p], row[p]);
        let eta = beta0 + u.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        let deta = match cfg.response {
            Response::Gaussian => {
                let r = y - eta;
                lik += -0.5 * (LN_2PI + s) - 0.5 * r * r / sigma2;
                ds += -0.5 + 0.5 * r * r / sigma2;
                r / sigma2
            }
            Response::Bernoulli => {
                lik += y * eta - softplus(eta);
                y - sigmoid(eta)
            }
            Response::GammaResponse => {
                let k = (2.0 * eta - s).exp();
                let ln_r = eta - s;
                let r = ln_r.exp();
                lik += k * ln_r - ln_gamma(k) + (k - 1.0) * y.ln() - r * y;
                let dk = ln_r - digamma(k) + y.ln();
                let dlnr = k - r * y;
                ds += -k * dk - dlnr;
                2.0 * k * dk + dlnr
            }
        };
        for (j, &uj) in u.iter().enumerate() {
            dbeta[j] += deta * uj;
        }
        dbeta0 += deta;
    }
    finite("likelihood", lik)?;

    for j in 0..p {
        grad[j] += if positive { dbeta[j] * beta[j] } else { dbeta[j] };
    }
    if let Some(i) = b0_idx {
        grad[i] += dbeta0;
    }
    if let Some(i) = s_idx {
        grad[i] += ds;
    }
    Ok(prior + lik)
}

fn factor_prior(prior: FactorPrior) -> Result<(Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>)> {
    Ok(match prior {
        FactorPrior::Normal { var } => {
            let n = Normal::new(0.0, var)?;
            (Box::new(move |x| n.ln_pdf(x)), Box::new(move |x| n.d_ln_pdf(x)))
        }
        FactorPrior::Laplace { scale } => {
            let l = Laplace::new(0.0, scale)?;
            (Box::new(move |x| l.ln_pdf(x)), Box::new(move |x| l.d_ln_pdf(x)))
        }
    })
}

fn fa(cfg: &ScenarioConfig, data: &ContextDataset, v: &[f64], grad: &mut [f64]) -> Result<f64> {
    let (p, q) = (cfg.obs_dim, cfg.z_dim);
    let f = cfg.fa_priors;
    let (oz, omu, opsi, ow) = (0, q, q + p, q + 2 * p);
    let z = &v[oz..oz + q];
    let mu = &v[omu..omu + p];
    let log_psi = &v[opsi..opsi + p];
    let tri = lower_tri_indices(p, q);
    let mut w = vec![0.0; p * q];
    for (n, &(i, j)) in tri.iter().enumerate() {
        let raw = v[ow + n];
        w[i * q + j] = if i == j { raw.exp() } else { raw };
    }

    let mut prior = 0.0;
    let (zp, dzp) = factor_prior(f.z_prior)?;
    for j in 0..q {
        prior += zp(z[j]);
        grad[oz + j] += dzp(z[j]);
    }
    let mu_prior = Normal::new(0.0, f.mu_var)?;
    let psi_prior = InverseGamma::new(f.psi_shape, f.psi_scale)?;
    for i in 0..p {
        prior += mu_prior.ln_pdf(mu[i]);
        grad[omu + i] += mu_prior.d_ln_pdf(mu[i]);
        prior += psi_prior.ln_pdf_log(log_psi[i]);
        grad[opsi + i] += psi_prior.d_ln_pdf_log(log_psi[i]);
    }
    let (wp, dwp) = factor_prior(f.w_prior)?;
    for (n, &(i, j)) in tri.iter().enumerate() {
        let wv = w[i * q + j];
        if i == j {
            // folded prior 2 * base(w) on w > 0, stored as log w
            prior += std::f64::consts::LN_2 + wp(wv) + v[ow + n];
            grad[ow + n] += dwp(wv) * wv + 1.0;
        } else {
            prior += wp(wv);
            grad[ow + n] += dwp(wv);
        }
    }
    finite("prior", prior)?;

    let psi: Vec<f64> = log_psi.iter().map(|s| s.exp()).collect();
    let mean: Vec<f64> = (0..p).map(|i| mu[i] + (0..q).map(|j| w[i * q + j] * z[j]).sum::<f64>()).collect();
    let mut lik = 0.0;
    let mut dmean = vec![0.0; p];
    for row in data.rows.iter_rows() {
        for i in 0..p {
            let r = row[i] - mean[i];
            lik += -0.5 * (LN_2PI + log_psi[i]) - 0.5 * r * r / psi[i];
            dmean[i] += r / psi[i];
            grad[opsi + i] += -0.5 + 0.5 * r * r / psi[i];
        }
    }
    finite("likelihood", lik)?;
    for i in 0..p {
        grad[omu + i] += dmean[i];
    }
    for (n, &(i, j)) in tri.iter().enumerate() {
        let dw = dmean[i] * z[j];
        grad[ow + n] += if i == j { dw * w[i * q + j] } else { dw };
        grad[oz + j] += dmean[i] * w[i * q + j];
    }
    Ok(prior + lik)
}

fn gmm(cfg: &ScenarioConfig, data: &ContextDataset, v: &[f64], grad: &mut [f64]) -> Result<f64> {
    let (m, l) = (cfg.m, cfg.l);
    let ml = m * l;
    let (omu, os, oeta) = (0, ml, 2 * ml);
    let mu = &v[omu..omu + ml];
    let logs2 = &v[os..os + ml];
    let eta = &v[oeta..oeta + m - 1];
    let s2: Vec<f64> = logs2.iter().map(|s| s.exp()).collect();
    let phi = softmax_anchor(eta);
    let log_phi: Vec<f64> = phi.iter().map(|p| p.ln()).collect();
    let alpha = cfg.dirichlet_alpha;
    let lambda = cfg.lambda_mean_scale;
    let (shape, scale) = cfg.ig_noise().ok_or_else(|| Error::Config("GMM needs an IG variance prior".into()))?;
    let ig = InverseGamma::new(shape, scale)?;

    let mut prior = 0.0;
    for c in 0..ml {
        prior += ig.ln_pdf_log(logs2[c]);
        grad[os + c] += ig.d_ln_pdf_log(logs2[c]);
        let var = lambda * s2[c];
        prior += -0.5 * (LN_2PI + lambda.ln() + logs2[c]) - 0.5 * mu[c] * mu[c] / var;
        grad[omu + c] += -mu[c] / var;
        grad[os + c] += -0.5 + 0.5 * mu[c] * mu[c] / var;
    }
    // Dirichlet prior on phi plus the log-Jacobian sum(log phi) of the anchored softmax
    prior += ln_gamma(m as f64 * alpha) - m as f64 * ln_gamma(alpha);
    prior += alpha * log_phi.iter().sum::<f64>();
    for k in 0..m - 1 {
        grad[oeta + k] += alpha * (1.0 - m as f64 * phi[k]);
    }
    finite("prior", prior)?;

    let mut lik = 0.0;
    let mut comp = vec![0.0; m];
    let mut resp_sum = vec![0.0; m];
    let mut dmu = vec![0.0; ml];
    let mut ds = vec![0.0; ml];
    for row in data.rows.iter_rows() {
        for c in 0..m {
            let mut a = log_phi[c];
            for d in 0..l {
                let i = c * l + d;
                let r = row[d] - mu[i];
                a += -0.5 * (LN_2PI + logs2[i]) - 0.5 * r * r / s2[i];
            }
            comp[c] = a;
        }
        let max = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = comp.iter().map(|a| (a - max).exp()).sum();
        let lse = max + sum.ln();
        lik += lse;
        for c in 0..m {
            let resp = (comp[c] - lse).exp();
            resp_sum[c] += resp;
            for d in 0..l {
                let i = c * l + d;
                let r = row[d] - mu[i];
                dmu[i] += resp * r / s2[i];
                ds[i] += resp * (-0.5 + 0.5 * r * r / s2[i]);
            }
        }
    }
    finite("likelihood", lik)?;
    for i in 0..ml {
        grad[omu + i] += dmu[i];
        grad[os + i] += ds[i];
    }
    let n = data.k() as f64;
    for k in 0..m - 1 {
        grad[oeta + k] += resp_sum[k] - n * phi[k];
    }
    Ok(prior + lik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodels::generate::{sample_dataset, sample_fa_full, sample_gmm_full, FaOverrides};
    use crate::probmodels::sample_glm_dataset;
    use crate::rng::seeded;
    use crate::tensor::Matrix;
    use rand::Rng;

    fn fd_check(cfg: &ScenarioConfig, data: &ContextDataset, z: &[f64], tol: f64) {
        let t = ScenarioTarget::new(cfg, data).unwrap();
        let (_, g) = log_joint(cfg, data, z).unwrap();
        for i in 0..z.len() {
            let h = 1e-5 * (1.0 + z[i].abs());
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += h;
            zm[i] -= h;
            let fd = (t.log_density(&zp).unwrap() - t.log_density(&zm).unwrap()) / (2.0 * h);
            let err = (fd - g[i]).abs() / (1.0 + fd.abs().max(g[i].abs()));
            assert!(err < tol, "coordinate {i}: analytic {} fd {fd} (rel {err})", g[i]);
        }
    }

    fn random_target_point<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> (ContextDataset, Vec<f64>) {
        let (data, latent) = sample_dataset(cfg, rng).unwrap();
        let mut z = match cfg.family {
            Family::GLM => latent.values,
            Family::FA => sample_fa_full(cfg, FaOverrides::default(), rng).unwrap().0,
            Family::GMM => sample_gmm_full(cfg, rng).unwrap().0,
        };
        // move off the generating point
        for v in z.iter_mut() {
            *v += 0.1 * crate::probmodels::distributions::std_normal(rng);
        }
        (data, z)
    }

    #[test]
    fn gradients_match_finite_differences_on_every_scenario() {
        let mut rng = seeded(21);
        for id in ScenarioConfig::ids() {
            let mut cfg = ScenarioConfig::by_id(&id).unwrap();
            cfg.k = cfg.k.min(12);
            for _ in 0..3 {
                let (data, z) = random_target_point(&cfg, &mut rng);
                fd_check(&cfg, &data, &z, 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_zero_data_log_likelihood() {
        // beta = 0, sigma^2 = 1, y = 0: likelihood is -K/2 log(2 pi)
        let mut cfg = ScenarioConfig::glm(3).unwrap();
        cfg.noise_prior = Some(NoisePrior::Known { variance: 1.0 });
        let mut rng = seeded(0);
        let (mut data, _) = sample_glm_dataset(&cfg, &mut rng).unwrap();
        for r in 0..data.k() {
            data.rows.set(r, cfg.p, 0.0);
        }
        let z = vec![0.0; cfg.p];
        let (lp, _) = log_joint(&cfg, &data, &z).unwrap();
        let prior = cfg.p as f64 * Laplace::new(0.0, 1.0).unwrap().ln_pdf(0.0);
        let expected = -(cfg.k as f64) / 2.0 * LN_2PI;
        assert!((lp - prior - expected).abs() < 1e-10);
    }

    #[test]
    fn single_component_mixture_is_a_diagonal_gaussian() {
        let mut cfg = ScenarioConfig::gmm(2).unwrap();
        cfg.m = 1;
        let mut rng = seeded(5);
        let (data, _) = sample_dataset(&cfg, &mut rng).unwrap();
        let l = cfg.l;
        let z: Vec<f64> = (0..2 * l).map(|_| rng.random::<f64>() - 0.5).collect();
        let (lp, _) = log_joint(&cfg, &data, &z).unwrap();

        // independent implementation: N(x; mu, s2) likelihood, IG prior on s2 with
        // Jacobian, N(0, lambda s2) on mu; Dir(alpha) on a single weight is constant 0
        let mut direct = 0.0;
        for d in 0..l {
            let (mu, s) = (z[d], z[l + d]);
            let s2 = s.exp();
            direct += 5.0 * 2f64.ln() - ln_gamma(5.0) - 5.0 * s - 2.0 / s2;
            direct += -0.5 * (2.0 * std::f64::consts::PI * 3.0 * s2).ln() - mu * mu / (6.0 * s2);
            for r in 0..data.k() {
                let x = data.rows.get(r, d);
                direct += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (x - mu).powi(2) / (2.0 * s2);
            }
        }
        assert!((lp - direct).abs() < 1e-12 * direct.abs().max(1.0), "{lp} vs {direct}");
    }

    #[test]
    fn mixture_is_invariant_to_component_relabelling() {
        let cfg = ScenarioConfig::gmm(2).unwrap();
        let mut rng = seeded(17);
        let (data, _) = sample_dataset(&cfg, &mut rng).unwrap();
        let (target, _, _) = sample_gmm_full(&cfg, &mut rng).unwrap();
        let layout = cfg.target_layout();
        let blocks = layout.constrain(&target).unwrap();
        let (m, l) = (cfg.m, cfg.l);
        let perm = [2usize, 0, 1];
        let permute = |v: &[f64], width: usize| -> Vec<f64> {
            perm.iter().flat_map(|&c| v[c * width..(c + 1) * width].to_vec()).collect()
        };
        let permuted = vec![permute(&blocks[0], l), permute(&blocks[1], l), permute(&blocks[2], 1)];
        let z2 = layout.unconstrain(&permuted).unwrap();
        let (a, _) = log_joint(&cfg, &data, &target).unwrap();
        let (b, _) = log_joint(&cfg, &data, &z2).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        assert_eq!(m, 3);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let cfg = ScenarioConfig::glm(1).unwrap();
        let data = ContextDataset::new(Matrix::zeros(3, 2), Family::GLM);
        assert!(matches!(log_joint(&cfg, &data, &[0.0; 6]), Err(Error::Dimension(_))));
        let data = ContextDataset::new(Matrix::zeros(3, 6), Family::FA);
        assert!(matches!(log_joint(&cfg, &data, &[0.0; 6]), Err(Error::Config(_))));
    }

    #[test]
    fn overflow_is_reported_with_term_name() {
        let cfg = ScenarioConfig::glm(7).unwrap();
        let (data, mut z) = sample_glm_dataset(&cfg, &mut seeded(1)).unwrap();
        z.values[0] = 800.0;
        let err = log_joint(&cfg, &data, &z.values).unwrap_err();
        assert!(matches!(err, Error::Evaluation { .. }), "{err}");
    }
}
