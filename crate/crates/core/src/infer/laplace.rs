use super::{map_estimate, LogDensity, MapConfig, MapResult};
use crate::probmodels::AnalyticPosterior;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Smallest eigenvalue allowed in the negative Hessian.
const EIG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct LaplaceResult {
    pub posterior: AnalyticPosterior,
    pub map: MapResult,
    /// Some eigenvalue of the negative Hessian was raised to the floor.
    pub floored: bool,
}

/// Hessian of the log-density by central differences of the exact gradient,
/// symmetrized.
pub fn hessian<L: LogDensity + ?Sized>(target: &L, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = target.dim();
    let mut h = DMatrix::zeros(d, d);
    let (mut gp, mut gm) = (vec![0.0; d], vec![0.0; d]);
    let mut xp = x.to_vec();
    for j in 0..d {
        let step = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        target.log_density_grad(&xp, &mut gp)?;
        xp[j] = x[j] - step;
        target.log_density_grad(&xp, &mut gm)?;
        xp[j] = x[j];
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Gaussian centred at `mode` with covariance `(-H)^{-1}`. Returns the
/// covariance and whether eigenvalues had to be floored.
pub fn laplace_at<L: LogDensity + ?Sized>(target: &L, mode: &[f64]) -> Result<(DMatrix<f64>, bool)> {
    let neg = -hessian(target, mode)?;
    let eig = SymmetricEigen::new(neg);
    let floored = eig.eigenvalues.iter().any(|&l| !(l > EIG_FLOOR));
    let inv = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| 1.0 / l.max(EIG_FLOOR)));
    let v = &eig.eigenvectors;
    let cov = v * DMatrix::from_diagonal(&inv) * v.transpose();
    Ok(((&cov + cov.transpose()) * 0.5, floored))
}

/// Laplace approximation: MAP from `init`, then the inverse negative
/// Hessian there.
pub fn laplace_approximation<L: LogDensity + ?Sized>(target: &L, init: &[f64], cfg: &MapConfig) -> Result<LaplaceResult> {
    let map = map_estimate(target, init, cfg)?;
    if !map.converged {
        log::warn!("MAP for the Laplace approximation stopped at gradient norm {:.3e}", map.grad_norm);
    }
    let (cov, floored) = laplace_at(target, &map.point)?;
    if floored {
        log::warn!("negative Hessian is not positive definite; eigenvalues floored at {EIG_FLOOR:e}");
    }
    let mean = DVector::from_column_slice(&map.point);
    let posterior = AnalyticPosterior::gaussian(mean, cov)
        .map_err(|e| Error::Domain(format!("Laplace covariance: {e}")))?;
    Ok(LaplaceResult { posterior, map, floored })
}
