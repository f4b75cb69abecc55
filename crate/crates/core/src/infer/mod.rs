//! Reference posterior methods over differentiable log-densities: HMC,
//! MAP, Laplace and ADVI.

mod advi;
mod hmc;
mod laplace;
mod map;
mod reference;

pub use advi::{advi, AdviConfig, AdviFamily, AdviResult};
pub use hmc::{hmc_sample, leapfrog, HmcConfig, HmcDiagnostics, HmcOutput};
pub use laplace::{hessian, laplace_approximation, laplace_at, LaplaceResult};
pub use map::{map_estimate, MapConfig, MapResult};
pub use reference::{chain_inits, default_init, reference_samples, rotate_components, Method, ReferenceConfig};

pub use crate::probmodels::LogDensity;
use crate::Matrix;

/// Split-R-hat for each coordinate. Every chain is cut into two halves and
/// the halves are compared as separate chains. Needs at least 4 draws per chain.
pub fn split_rhat(chains: &[Matrix]) -> Vec<f64> {
    let Some(first) = chains.first() else { return Vec::new() };
    let d = first.cols();
    let n = chains.iter().map(Matrix::rows).min().unwrap_or(0) / 2;
    if n < 2 {
        return vec![f64::NAN; d];
    }
    (0..d)
        .map(|c| {
            let halves: Vec<Vec<f64>> = chains
                .iter()
                .flat_map(|ch| {
                    let col = ch.column(c);
                    let m = col.len();
                    [col[m - 2 * n..m - n].to_vec(), col[m - n..].to_vec()]
                })
                .collect();
            let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n as f64).collect();
            let w = halves
                .iter()
                .zip(&means)
                .map(|(h, m)| h.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64)
                .sum::<f64>()
                / halves.len() as f64;
            let grand = means.iter().sum::<f64>() / means.len() as f64;
            let b_over_n = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
            let var_plus = (n - 1) as f64 / n as f64 * w + b_over_n;
            if w == 0.0 {
                if b_over_n == 0.0 { 1.0 } else { f64::INFINITY }
            } else {
                (var_plus / w).sqrt()
            }
        })
        .collect()
}
