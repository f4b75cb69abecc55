use crate::probmodels::{ContextDataset, Family, Response, ScenarioConfig};
use crate::samples::SampleSet;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveKind {
    Rmse,
    Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveScore {
    pub kind: PredictiveKind,
    pub value: f64,
    /// Point prediction for each held-out row (a probability for Bernoulli responses).
    pub predictions: Vec<f64>,
}

/// Score the posterior-mean GLM on held-out rows: RMSE of the mean response,
/// or accuracy at threshold 0.5 for a Bernoulli response. Means are taken
/// over constrained parameters.
pub fn predictive_scores(cfg: &ScenarioConfig, posterior: &SampleSet, heldout: &ContextDataset) -> Result<PredictiveScore> {
    if cfg.family != Family::GLM || heldout.family != Family::GLM {
        return Err(Error::Unsupported("predictive scores need a GLM scenario and dataset".into()));
    }
    if heldout.width() != cfg.p + 1 {
        return Err(Error::Dimension(format!("held-out rows have width {}, expected {}", heldout.width(), cfg.p + 1)));
    }
    let layout = cfg.latent_layout();
    let d = layout.dim();
    if posterior.dim() < d || posterior.n() == 0 {
        return Err(Error::Dimension(format!("posterior draws of width {} for a latent of width {d}", posterior.dim())));
    }
    let mut beta = vec![0.0; cfg.p];
    let mut beta0 = 0.0;
    for row in posterior.draws.iter_rows() {
        let blocks = layout.constrain(&row[..d])?;
        for (b, v) in beta.iter_mut().zip(&blocks[0]) {
            *b += v;
        }
        if cfg.has_intercept {
            beta0 += blocks[1][0];
        }
    }
    let n = posterior.n() as f64;
    beta.iter_mut().for_each(|b| *b /= n);
    beta0 /= n;
    let mut predictions = Vec::with_capacity(heldout.k());
    let mut acc = 0.0;
    for row in heldout.rows.iter_rows() {
        let eta = beta0 + row[..cfg.p].iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>();
        let y = row[cfg.p];
        let pred = match cfg.response {
            Response::Gaussian => eta,
            Response::Bernoulli => 1.0 / (1.0 + (-eta).exp()),
            Response::GammaResponse => eta.exp(),
        };
        acc += match cfg.response {
            Response::Bernoulli => ((pred > 0.5) == (y > 0.5)) as u8 as f64,
            _ => (pred - y).powi(2),
        };
        predictions.push(pred);
    }
    let k = heldout.k().max(1) as f64;
    let (kind, value) = match cfg.response {
        Response::Bernoulli => (PredictiveKind::Accuracy, acc / k),
        _ => (PredictiveKind::Rmse, (acc / k).sqrt()),
    };
    Ok(PredictiveScore { kind, value, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodels::sample_dataset;
    use crate::rng::seeded;
    use crate::Matrix;
    use rand::Rng;

    fn glm(response: Response) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::by_id("glm-1").unwrap();
        cfg.response = response;
        if response != Response::Gaussian {
            cfg.noise_prior = None;
        }
        cfg
    }

    #[test]
    fn true_parameters_on_noiseless_data_give_zero_rmse() {
        let cfg = glm(Response::Gaussian);
        let beta = [0.5, -1.0, 2.0, 0.0, 1.5];
        let mut rng = seeded(1);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                x.into_iter().chain([y]).collect()
            })
            .collect();
        let data = ContextDataset::new(Matrix::from_rows(&rows), Family::GLM);
        let draws = Matrix::from_rows(&[beta.iter().copied().chain([0.1f64.ln()]).collect()]);
        let s = predictive_scores(&cfg, &SampleSet::new(draws, "truth"), &data).unwrap();
        assert_eq!(s.kind, PredictiveKind::Rmse);
        assert!(s.value < 1e-14);
    }

    #[test]
    fn rmse_matches_recomputation() {
        let cfg = glm(Response::Gaussian);
        let (data, _) = sample_dataset(&cfg, &mut seeded(2)).unwrap();
        let mut rng = seeded(3);
        let draws = Matrix::from_vec(40, 6, (0..240).map(|_| rng.random::<f64>() - 0.5).collect());
        let s = predictive_scores(&cfg, &SampleSet::new(draws, "x"), &data).unwrap();
        let direct = (data.rows.iter_rows().zip(&s.predictions).map(|(r, p)| (r[5] - p).powi(2)).sum::<f64>()
            / data.k() as f64)
            .sqrt();
        assert!((s.value - direct).abs() <= 1e-12);
    }

    #[test]
    fn coin_flip_predictor_is_at_chance() {
        let cfg = glm(Response::Bernoulli);
        let mut rng = seeded(4);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|i| (0..5).map(|_| rng.random::<f64>() - 0.5).chain([(i % 2) as f64]).collect())
            .collect();
        let data = ContextDataset::new(Matrix::from_rows(&rows), Family::GLM);
        // random coefficients carry no information about alternating labels
        let draws = Matrix::from_vec(1, 5, vec![0.3, -0.2, 0.1, 0.4, -0.5]);
        let s = predictive_scores(&cfg, &SampleSet::new(draws, "x"), &data).unwrap();
        assert_eq!(s.kind, PredictiveKind::Accuracy);
        assert!((s.value - 0.5).abs() < 0.05, "{}", s.value);
        let zero = Matrix::zeros(1, 5);
        let s = predictive_scores(&cfg, &SampleSet::new(zero, "x"), &data).unwrap();
        assert!(s.predictions.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn non_glm_is_rejected() {
        let fa = ScenarioConfig::by_id("fa-1").unwrap();
        let data = ContextDataset::new(Matrix::zeros(3, fa.row_width()), Family::FA);
        assert!(predictive_scores(&fa, &SampleSet::new(Matrix::zeros(1, fa.latent_dim()), "x"), &data).is_err());
    }
}
