use super::LogDensity;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub max_iters: usize,
    /// Stop once the Euclidean gradient norm is at most this.
    pub grad_tol: f64,
    /// Number of curvature pairs kept by L-BFGS.
    pub history: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { max_iters: 2000, grad_tol: 1e-8, history: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub point: Vec<f64>,
    pub log_density: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximize `target` from `init` by L-BFGS with a backtracking (Armijo) line
/// search. Failure to reach `grad_tol` is reported through `converged`.
pub fn map_estimate<L: LogDensity + ?Sized>(target: &L, init: &[f64], cfg: &MapConfig) -> Result<MapResult> {
    let d = target.dim();
    if init.len() != d {
        return Err(Error::Dimension(format!("initial point of length {}, target has {d}", init.len())));
    }
    // Work with f = -log p.
    let eval = |x: &[f64], g: &mut [f64]| -> Result<f64> {
        let lp = target.log_density_grad(x, g)?;
        g.iter_mut().for_each(|v| *v = -*v);
        Ok(-lp)
    };
    let mut x = init.to_vec();
    let mut g = vec![0.0; d];
    let mut f = eval(&x, &mut g)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut it = 0;
    let mut g_new = vec![0.0; d];
    while it < cfg.max_iters && norm(&g) > cfg.grad_tol {
        it += 1;
        let mut dir = two_loop(&g, &pairs);
        if dot(&dir, &g) >= 0.0 {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&dir, &g);
        let mut alpha = if pairs.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + alpha * d).collect();
            if let Ok(f_new) = eval(&trial, &mut g_new) {
                // Near the optimum f stops resolving the decrease; accept a
                // step that stays within rounding of f and shrinks the gradient.
                let armijo = f_new <= f + 1e-4 * alpha * slope;
                let flat = f_new <= f + 1e-13 * f.abs().max(1.0) && norm(&g_new) < norm(&g);
                if armijo || flat {
                    accepted = Some((trial, f_new));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, sy));
        }
        x = x_new;
        f = f_new;
        g.copy_from_slice(&g_new);
    }
    let grad_norm = norm(&g);
    Ok(MapResult { point: x, log_density: -f, grad_norm, iterations: it, converged: grad_norm <= cfg.grad_tol })
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, sy) in pairs.iter().rev() {
        let a = dot(s, &q) / sy;
        q.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    if let Some((_, y, sy)) = pairs.back() {
        let gamma = sy / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, sy), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = dot(y, &q) / sy;
        q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodels::{analytic_posterior, sample_dataset, ScenarioConfig, ScenarioTarget};
    use crate::rng::seeded;

    /// `-0.5 (x - c)' A (x - c)` with a fixed SPD `A`.
    struct Quadratic {
        a: [[f64; 3]; 3],
        c: [f64; 3],
    }

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            3
        }
        fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
            let r: Vec<f64> = (0..3).map(|i| x[i] - self.c[i]).collect();
            let mut lp = 0.0;
            for i in 0..3 {
                g[i] = -(0..3).map(|j| self.a[i][j] * r[j]).sum::<f64>();
                lp += 0.5 * r[i] * g[i];
            }
            Ok(lp)
        }
    }

    fn quad() -> Quadratic {
        Quadratic { a: [[4.0, 1.0, 0.5], [1.0, 3.0, -0.7], [0.5, -0.7, 2.0]], c: [1.0, -2.0, 30.0] }
    }

    #[test]
    fn quadratic_maximizer_is_exact() {
        let q = quad();
        let r = map_estimate(&q, &[0.0; 3], &MapConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        for (x, c) in r.point.iter().zip(&q.c) {
            assert!((x - c).abs() <= 1e-8, "{x} vs {c}");
        }
    }

    #[test]
    fn restart_from_solution_is_a_fixed_point() {
        let q = quad();
        let r = map_estimate(&q, &[5.0, 5.0, 5.0], &MapConfig::default()).unwrap();
        let again = map_estimate(&q, &r.point, &MapConfig::default()).unwrap();
        for (a, b) in r.point.iter().zip(&again.point) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn conjugate_glm_map_is_the_closed_form_mode() {
        let cfg = ScenarioConfig::by_id("glm-1").unwrap();
        for seed in 0..3 {
            let (data, _) = sample_dataset(&cfg, &mut seeded(seed)).unwrap();
            let exact = analytic_posterior(&cfg, &data).unwrap().mode_latent();
            let target = ScenarioTarget::new(&cfg, &data).unwrap();
            let r = map_estimate(&target, &vec![0.0; exact.len()], &MapConfig::default()).unwrap();
            assert!(r.converged, "grad norm {}", r.grad_norm);
            for (a, b) in r.point.iter().zip(&exact) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn unbounded_target_does_not_converge() {
        struct Ramp;
        impl LogDensity for Ramp {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
                g[0] = 1.0;
                Ok(x[0])
            }
        }
        let r = map_estimate(&Ramp, &[0.0], &MapConfig { max_iters: 50, ..MapConfig::default() }).unwrap();
        assert!(!r.converged);
        assert!(map_estimate(&Ramp, &[0.0, 1.0], &MapConfig::default()).is_err());
    }
}
