//! Joint samplers `(x, z) ~ P(x, z)` for the three families.

use nalgebra::DMatrix;
use rand::Rng;

use super::config::{CoeffPrior, CovariateSource, FactorPrior, Family, NoisePrior, Response, ScenarioConfig};
use super::distributions::{
    std_normal, Categorical, Dirichlet, Gamma, InverseGamma, Laplace, Normal,
};
use super::layout::{lower_tri_indices, LatentVector};
use super::ContextDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Attempts per dataset before a generation error is reported.
pub const MAX_RETRIES: usize = 100;

/// Linear predictors are clamped to this magnitude before `exp` in the
/// gamma-response sampler.
pub const ETA_CLAMP: f64 = 30.0;

fn require(cfg: &ScenarioConfig, family: Family) -> Result<()> {
    if cfg.family != family {
        return Err(Error::Config(format!("expected a {family:?} scenario, got {:?}", cfg.family)));
    }
    cfg.validate()
}

fn retry<T>(mut attempt: impl FnMut() -> Result<Option<T>>) -> Result<T> {
    for _ in 0..MAX_RETRIES {
        if let Some(v) = attempt()? {
            return Ok(v);
        }
    }
    Err(Error::Generation(format!("no finite draw after {MAX_RETRIES} attempts")))
}

/// Draw a dataset of the scenario's family.
pub fn sample_dataset<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ContextDataset, LatentVector)> {
    match cfg.family {
        Family::GLM => sample_glm_dataset(cfg, rng),
        Family::FA => sample_fa_dataset(cfg, rng),
        Family::GMM => sample_gmm_dataset(cfg, rng),
    }
}

fn draw_coeff<R: Rng + ?Sized>(prior: CoeffPrior, sigma2: f64, rng: &mut R) -> Result<f64> {
    Ok(match prior {
        CoeffPrior::Normal { var } => Normal::new(0.0, var)?.sample(rng),
        CoeffPrior::ConjugateNormal { var } => Normal::new(0.0, var * sigma2)?.sample(rng),
        CoeffPrior::Laplace { scale } => Laplace::new(0.0, scale)?.sample(rng),
        CoeffPrior::Gamma { shape, rate } => Gamma::new(shape, rate)?.sample(rng),
    })
}

/// GLM data: covariates in the first `p` columns, response in the last.
pub fn sample_glm_dataset<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ContextDataset, LatentVector)> {
    require(cfg, Family::GLM)?;
    let (k, p) = (cfg.k, cfg.p);
    let layout = cfg.latent_layout();
    retry(|| {
        let sigma2 = match cfg.noise_prior {
            Some(NoisePrior::InverseGamma { shape, scale }) => InverseGamma::new(shape, scale)?.sample(rng),
            Some(NoisePrior::Known { variance }) => variance,
            None => 1.0,
        };
        let beta: Vec<f64> = (0..p).map(|_| draw_coeff(cfg.coeff_prior, sigma2, rng)).collect::<Result<_>>()?;
        let beta0 = if cfg.has_intercept { Normal::new(0.0, cfg.intercept_prior_var)?.sample(rng) } else { 0.0 };
        let u = sample_covariates(cfg.covariate_source, k, p, rng)?;
        let mut rows = Matrix::zeros(k, p + 1);
        for j in 0..k {
            let uj = u.row(j);
            let eta = beta0 + uj.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            let y = match cfg.response {
                Response::Gaussian => eta + sigma2.sqrt() * std_normal(rng),
                Response::Bernoulli => {
                    let pr = 1.0 / (1.0 + (-eta).exp());
                    if rng.random::<f64>() < pr {
                        1.0
                    } else {
                        0.0
                    }
                }
                Response::GammaResponse => {
                    let mean = eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp();
                    let shape = mean * mean / sigma2;
                    let rate = mean / sigma2;
                    // Tiny shapes underflow to zero; flooring keeps the
                    // parameter draw from being rejected.
                    match Gamma::new(shape, rate) {
                        Ok(g) => g.sample(rng).max(f64::MIN_POSITIVE),
                        Err(_) => return Ok(None),
                    }
                }
            };
            if !y.is_finite() {
                return Ok(None);
            }
            rows.row_mut(j)[..p].copy_from_slice(uj);
            rows.set(j, p, y);
        }
        let mut values: Vec<f64> = match cfg.coeff_prior {
            CoeffPrior::Gamma { .. } => beta.iter().map(|b| b.ln()).collect(),
            _ => beta.clone(),
        };
        if cfg.has_intercept {
            values.push(beta0);
        }
        if cfg.ig_noise().is_some() {
            values.push(sigma2.ln());
        }
        if !rows.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        Ok(Some((ContextDataset::new(rows, Family::GLM), LatentVector::new(values, layout.clone())?)))
    })
}

/// Fixed parameter values for factor-analysis debugging.
#[derive(Clone, Copy, Debug, Default)]
pub struct FaOverrides {
    /// `W = [I; 0]`.
    pub w_identity: bool,
    pub zero_mean: bool,
    pub unit_psi: bool,
}

fn draw_factor<R: Rng + ?Sized>(prior: FactorPrior, rng: &mut R) -> Result<f64> {
    Ok(match prior {
        FactorPrior::Normal { var } => Normal::new(0.0, var)?.sample(rng),
        FactorPrior::Laplace { scale } => Laplace::new(0.0, scale)?.sample(rng),
    })
}

pub fn sample_fa_dataset<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ContextDataset, LatentVector)> {
    sample_fa_dataset_with(cfg, FaOverrides::default(), rng)
}

/// Factor-analysis data; the latent vector holds the factors only.
pub fn sample_fa_dataset_with<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    overrides: FaOverrides,
    rng: &mut R,
) -> Result<(ContextDataset, LatentVector)> {
    let (_, z, x) = sample_fa_full(cfg, overrides, rng)?;
    let layout = cfg.latent_layout();
    Ok((ContextDataset::new(x, Family::FA), LatentVector::new(z, layout)?))
}

/// All FA parameters of one draw: the full unconstrained target vector, the
/// factors and the data.
pub(crate) fn sample_fa_full<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    overrides: FaOverrides,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, Matrix)> {
    require(cfg, Family::FA)?;
    let (k, p, q) = (cfg.k, cfg.obs_dim, cfg.z_dim);
    let f = cfg.fa_priors;
    retry(|| {
        let mu_prior = Normal::new(0.0, f.mu_var)?;
        let psi_prior = InverseGamma::new(f.psi_shape, f.psi_scale)?;
        let mu: Vec<f64> = (0..p).map(|_| if overrides.zero_mean { 0.0 } else { mu_prior.sample(rng) }).collect();
        let psi: Vec<f64> = (0..p).map(|_| if overrides.unit_psi { 1.0 } else { psi_prior.sample(rng) }).collect();
        let tri = lower_tri_indices(p, q);
        let mut w = vec![0.0; p * q];
        let mut w_packed = Vec::with_capacity(tri.len());
        for &(i, j) in &tri {
            let v = if overrides.w_identity {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else {
                let d = draw_factor(f.w_prior, rng)?;
                if i == j {
                    d.abs()
                } else {
                    d
                }
            };
            if i == j && v <= 0.0 {
                return Ok(None);
            }
            w[i * q + j] = v;
            w_packed.push(if i == j { v.ln() } else { v });
        }
        let z: Vec<f64> = (0..q).map(|_| draw_factor(f.z_prior, rng)).collect::<Result<_>>()?;
        let mean: Vec<f64> = (0..p).map(|i| mu[i] + (0..q).map(|j| w[i * q + j] * z[j]).sum::<f64>()).collect();
        let mut x = Matrix::zeros(k, p);
        for r in 0..k {
            for i in 0..p {
                x.set(r, i, mean[i] + psi[i].sqrt() * std_normal(rng));
            }
        }
        if !x.is_finite() {
            return Ok(None);
        }
        let mut target = z.clone();
        target.extend_from_slice(&mu);
        target.extend(psi.iter().map(|v| v.ln()));
        target.extend_from_slice(&w_packed);
        Ok(Some((target, z, x)))
    })
}

/// Gaussian-mixture data; the latent vector is `(mu, log sigma^2)` with
/// component-major ordering inside each block.
pub fn sample_gmm_dataset<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ContextDataset, LatentVector)> {
    let (_, z, x) = sample_gmm_full(cfg, rng)?;
    Ok((ContextDataset::new(x, Family::GMM), LatentVector::new(z, cfg.latent_layout())?))
}

pub(crate) fn sample_gmm_full<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>, Matrix)> {
    require(cfg, Family::GMM)?;
    let (k, m, l) = (cfg.k, cfg.m, cfg.l);
    let (shape, scale) = cfg.ig_noise().expect("validated");
    retry(|| {
        let phi = Dirichlet::symmetric(cfg.dirichlet_alpha, m)?.sample(rng);
        let ig = InverseGamma::new(shape, scale)?;
        let mut mu = vec![0.0; m * l];
        let mut s2 = vec![0.0; m * l];
        for c in 0..m {
            for d in 0..l {
                let v = ig.sample(rng);
                s2[c * l + d] = v;
                mu[c * l + d] = Normal::new(0.0, cfg.lambda_mean_scale * v)?.sample(rng);
            }
        }
        let cat = Categorical::new(phi.clone())?;
        let mut x = Matrix::zeros(k, l);
        for r in 0..k {
            let c = cat.sample(rng);
            for d in 0..l {
                x.set(r, d, mu[c * l + d] + s2[c * l + d].sqrt() * std_normal(rng));
            }
        }
        if !x.is_finite() || s2.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || phi.iter().any(|v| !(*v > 0.0)) {
            return Ok(None);
        }
        let mut z = mu;
        z.extend(s2.iter().map(|v| v.ln()));
        let mut target = z.clone();
        let last = phi[m - 1].ln();
        target.extend(phi[..m - 1].iter().map(|v| v.ln() - last));
        Ok(Some((target, z, x)))
    })
}

/// A dataset together with the full unconstrained target vector that
/// generated it (the latent vector plus every nuisance parameter).
pub fn sample_with_target<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ContextDataset, Vec<f64>)> {
    match cfg.family {
        Family::GLM => sample_glm_dataset(cfg, rng).map(|(d, z)| (d, z.values)),
        Family::FA => sample_fa_full(cfg, FaOverrides::default(), rng).map(|(t, _, x)| (ContextDataset::new(x, Family::FA), t)),
        Family::GMM => sample_gmm_full(cfg, rng).map(|(t, _, x)| (ContextDataset::new(x, Family::GMM), t)),
    }
}

/// Covariate matrix `K x p` from the configured source.
pub fn sample_covariates<R: Rng + ?Sized>(source: CovariateSource, k: usize, p: usize, rng: &mut R) -> Result<Matrix> {
    if k == 0 || p == 0 {
        return Err(Error::Dimension(format!("covariates need K, p >= 1 (got {k}, {p})")));
    }
    match source {
        CovariateSource::StdNormal => {
            Ok(Matrix::from_vec(k, p, (0..k * p).map(|_| std_normal(rng)).collect()))
        }
        CovariateSource::CorrelatedNormal { df } => {
            let corr = random_correlation(df, p, rng)?;
            let chol = corr
                .cholesky()
                .ok_or_else(|| Error::Generation("random correlation matrix not positive definite".into()))?;
            let lower = chol.l();
            let mut out = Matrix::zeros(k, p);
            for r in 0..k {
                let e: Vec<f64> = (0..p).map(|_| std_normal(rng)).collect();
                for i in 0..p {
                    out.set(r, i, (0..=i).map(|j| lower[(i, j)] * e[j]).sum());
                }
            }
            Ok(out)
        }
        CovariateSource::RandomFeatureMap { depth, width } => random_feature_map(k, p, depth, width, rng),
    }
}

/// Correlation matrix of a `Wishart(df, I_p)` draw (Bartlett decomposition).
pub(crate) fn random_correlation<R: Rng + ?Sized>(df: f64, p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if df.is_infinite() {
        return Ok(DMatrix::identity(p, p));
    }
    if !(df > p as f64 - 1.0) {
        return Err(Error::Domain(format!("Wishart df must exceed p - 1, got {df}")));
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi2 = Gamma::new((df - i as f64) / 2.0, 0.5)?.sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let s = &a * a.transpose();
    let d: Vec<f64> = (0..p).map(|i| s[(i, i)].sqrt()).collect();
    Ok(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { s[(i, j)] / (d[i] * d[j]) }))
}

fn random_feature_map<R: Rng + ?Sized>(k: usize, p: usize, depth: usize, width: usize, rng: &mut R) -> Result<Matrix> {
    if depth == 0 || width == 0 {
        return Err(Error::Dimension("random feature map needs depth, width >= 1".into()));
    }
    retry(|| {
        let mut h = Matrix::from_vec(k, width, (0..k * width).map(|_| std_normal(rng)).collect());
        for _ in 0..depth {
            let fan_in = h.cols() as f64;
            let w = Matrix::from_vec(width, width, (0..width * width).map(|_| std_normal(rng) / fan_in.sqrt()).collect());
            let b: Vec<f64> = (0..width).map(|_| 0.5 * std_normal(rng)).collect();
            let mut next = h.matmul(&w);
            for r in 0..k {
                for (v, bias) in next.row_mut(r).iter_mut().zip(&b) {
                    *v = (*v * 1.5 + bias).tanh();
                }
            }
            h = next;
        }
        let proj = Matrix::from_vec(width, p, (0..width * p).map(|_| std_normal(rng)).collect());
        let mut out = h.matmul(&proj);
        if k == 1 {
            return Ok(Some(Matrix::zeros(1, p)));
        }
        for c in 0..p {
            let col = out.column(c);
            let mean = col.iter().sum::<f64>() / k as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
            if !(var > 1e-12) {
                return Ok(None);
            }
            let sd = var.sqrt();
            for r in 0..k {
                out.set(r, c, (out.get(r, c) - mean) / sd);
            }
        }
        Ok(out.is_finite().then_some(out))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn mean_se(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v, (v / n).sqrt())
    }

    #[test]
    fn glm_1_shapes() {
        let cfg = ScenarioConfig::glm(1).unwrap();
        let (x, z) = sample_glm_dataset(&cfg, &mut seeded(0)).unwrap();
        assert_eq!(x.rows.shape(), (50, 6));
        assert_eq!(z.dim(), 6);
    }

    #[test]
    fn identical_seeds_give_identical_draws() {
        for id in ScenarioConfig::ids() {
            let cfg = ScenarioConfig::by_id(&id).unwrap();
            let a = sample_dataset(&cfg, &mut seeded(42)).unwrap();
            let b = sample_dataset(&cfg, &mut seeded(42)).unwrap();
            assert_eq!(a, b, "{id}");
            assert_eq!(a.0.k(), cfg.k);
            assert_eq!(a.0.width(), cfg.row_width());
            assert_eq!(a.1.dim(), cfg.latent_dim());
            assert!(a.0.is_finite());
        }
    }

    #[test]
    fn glm_1_noise_variance_mean() {
        let cfg = ScenarioConfig::glm(1).unwrap();
        let mut cheap = cfg.clone();
        cheap.k = 1;
        let mut rng = seeded(9);
        let s2: Vec<f64> = (0..100_000)
            .map(|_| sample_glm_dataset(&cheap, &mut rng).unwrap().1.values[5].exp())
            .collect();
        let (m, _, se) = mean_se(&s2);
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn fa_3_shapes_and_positive_structure() {
        let cfg = ScenarioConfig::fa(3).unwrap();
        let mut rng = seeded(1);
        let (x, z) = sample_fa_dataset(&cfg, &mut rng).unwrap();
        assert_eq!(x.rows.shape(), (25, 5));
        assert_eq!(z.dim(), 3);
        for _ in 0..200 {
            let (target, _, _) = sample_fa_full(&cfg, FaOverrides::default(), &mut rng).unwrap();
            let layout = cfg.target_layout();
            let blocks = layout.constrain(&target).unwrap();
            assert!(blocks[2].iter().all(|&v| v > 0.0), "psi");
            for (&(i, j), &w) in lower_tri_indices(5, 3).iter().zip(&blocks[3]) {
                if i == j {
                    assert!(w > 0.0);
                }
            }
        }
    }

    #[test]
    fn fa_identity_hook_second_moment() {
        // x = z + e with e ~ N(0, I): E[x x^T] = I + z z^T.
        let mut cfg = ScenarioConfig::fa(1).unwrap();
        cfg.k = 100_000;
        let hooks = FaOverrides { w_identity: true, zero_mean: true, unit_psi: true };
        let (x, z) = sample_fa_dataset_with(&cfg, hooks, &mut seeded(4)).unwrap();
        let n = x.k() as f64;
        for a in 0..3 {
            for b in 0..3 {
                let m: f64 = x.rows.iter_rows().map(|r| r[a] * r[b]).sum::<f64>() / n;
                let expect = if a == b { 1.0 } else { 0.0 } + z.values[a] * z.values[b];
                // se of a product moment is below sqrt(E[x_a^2 x_b^2] / n)
                let tol = 5.0 * ((1.0 + z.values[a].powi(2)) * (1.0 + z.values[b].powi(2)) * 3.0 / n).sqrt();
                assert!((m - expect).abs() < tol, "({a},{b}) {m} vs {expect}");
            }
        }
    }

    #[test]
    fn gmm_1_shapes_and_uniform_weights_hook() {
        let cfg = ScenarioConfig::gmm(1).unwrap();
        let (x, z) = sample_gmm_dataset(&cfg, &mut seeded(2)).unwrap();
        assert_eq!(x.rows.shape(), (50, 1));
        assert_eq!(z.dim(), 10);

        let mut flat = cfg.clone();
        flat.dirichlet_alpha = f64::INFINITY;
        flat.k = 50_000;
        let mut rng = seeded(3);
        let (target, _, _) = sample_gmm_full(&flat, &mut rng).unwrap();
        let phi = flat.target_layout().constrain(&target).unwrap()[2].clone();
        assert!(phi.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn gmm_1_mean_second_moment() {
        // E[mu^2] = lambda * E[sigma^2] = 3 * 0.5
        let mut cfg = ScenarioConfig::gmm(1).unwrap();
        cfg.k = 1;
        let mut rng = seeded(8);
        let mut sq = Vec::with_capacity(100_000);
        while sq.len() < 100_000 {
            let (_, z) = sample_gmm_dataset(&cfg, &mut rng).unwrap();
            sq.extend(z.values[..5].iter().map(|v| v * v));
        }
        let (m, _, se) = mean_se(&sq);
        assert!((m - 1.5).abs() < 4.0 * se, "{m} +- {se}");
    }

    #[test]
    fn covariate_moments() {
        let mut rng = seeded(6);
        let u = sample_covariates(CovariateSource::StdNormal, 100_000, 2, &mut rng).unwrap();
        for c in 0..2 {
            let (m, v, se) = mean_se(&u.column(c));
            assert!(m.abs() < 3.0 * se);
            // Var of sample variance of N(0,1) is 2/n
            assert!((v - 1.0).abs() < 3.0 * (2.0f64 / 1e5).sqrt());
        }
        let u = sample_covariates(CovariateSource::RandomFeatureMap { depth: 3, width: 8 }, 500, 4, &mut rng).unwrap();
        for c in 0..4 {
            let (m, v, _) = mean_se(&u.column(c));
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wishart_correlation_concentrates_at_identity() {
        let mut rng = seeded(12);
        let p = 4;
        // average |off-diagonal| shrinks like 1/sqrt(df)
        let mean_abs = |df: f64, rng: &mut crate::rng::StreamRng| {
            let mut acc = 0.0;
            for _ in 0..200 {
                let c = random_correlation(df, p, rng).unwrap();
                for i in 0..p {
                    for j in 0..i {
                        acc += c[(i, j)].abs();
                    }
                }
            }
            acc / (200.0 * 6.0)
        };
        let small = mean_abs(10.0, &mut rng);
        let large = mean_abs(1e6, &mut rng);
        assert!(large < 2e-3, "{large}");
        assert!(small > 10.0 * large);
        assert_eq!(random_correlation(f64::INFINITY, p, &mut rng).unwrap(), DMatrix::identity(p, p));
    }

    #[test]
    fn gamma_response_is_positive() {
        let cfg = ScenarioConfig::glm(7).unwrap();
        let mut rng = seeded(13);
        for _ in 0..50 {
            let (x, _) = sample_glm_dataset(&cfg, &mut rng).unwrap();
            assert!(x.rows.column(5).iter().all(|&y| y > 0.0));
        }
    }

    #[test]
    fn wrong_family_is_a_config_error() {
        let cfg = ScenarioConfig::fa(1).unwrap();
        assert!(matches!(sample_glm_dataset(&cfg, &mut seeded(0)), Err(Error::Config(_))));
    }
}
