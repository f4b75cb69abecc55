//! Samplers and log-densities for the priors and observation models.
//!
//! Sampling is backed by `rand_distr`; log-densities are written out here.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaSampler, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn positive(name: &str, what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name}: {what} must be positive and finite, got {v}")))
    }
}

/// Normal distribution parameterized by mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normal {
    pub mean: f64,
    pub var: f64,
}

impl Normal {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        positive("Normal", "variance", var)?;
        if !mean.is_finite() {
            return Err(Error::Domain(format!("Normal: mean must be finite, got {mean}")));
        }
        Ok(Self { mean, var })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.mean + self.var.sqrt() * e
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (LN_2PI + self.var.ln()) - 0.5 * d * d / self.var
    }

    /// d/dx ln_pdf.
    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        -(x - self.mean) / self.var
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }
}

/// Laplace distribution with location and scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Laplace {
    pub loc: f64,
    pub scale: f64,
}

impl Laplace {
    pub fn new(loc: f64, scale: f64) -> Result<Self> {
        positive("Laplace", "scale", scale)?;
        Ok(Self { loc, scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // inverse CDF on u in (-1/2, 1/2)
        let u: f64 = rng.random::<f64>() - 0.5;
        let a = 1.0 - 2.0 * u.abs();
        let a = if a <= 0.0 { f64::MIN_POSITIVE } else { a };
        self.loc - self.scale * u.signum() * a.ln()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        -(2.0 * self.scale).ln() - (x - self.loc).abs() / self.scale
    }

    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        let d = x - self.loc;
        if d == 0.0 {
            0.0
        } else {
            -d.signum() / self.scale
        }
    }

    pub fn mean(&self) -> f64 {
        self.loc
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.scale * self.scale
    }
}

/// Gamma distribution with shape and rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gamma {
    pub shape: f64,
    pub rate: f64,
}

impl Gamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        positive("Gamma", "shape", shape)?;
        positive("Gamma", "rate", rate)?;
        Ok(Self { shape, rate })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        GammaSampler::new(self.shape, 1.0 / self.rate)
            .expect("validated gamma parameters")
            .sample(rng)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }

    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        (self.shape - 1.0) / x - self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Inverse-gamma distribution with shape and scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        positive("InverseGamma", "shape", shape)?;
        positive("InverseGamma", "scale", scale)?;
        Ok(Self { shape, scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma { shape: self.shape, rate: self.scale }.sample(rng);
        1.0 / g
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }

    /// Log-density of `s = ln x` including the Jacobian `x`.
    pub fn ln_pdf_log(&self, s: f64) -> f64 {
        self.shape * self.scale.ln() - ln_gamma(self.shape) - self.shape * s - self.scale * (-s).exp()
    }

    /// d/ds of [`Self::ln_pdf_log`].
    pub fn d_ln_pdf_log(&self, s: f64) -> f64 {
        -self.shape + self.scale * (-s).exp()
    }

    /// Defined for shape > 1.
    pub fn mean(&self) -> f64 {
        self.scale / (self.shape - 1.0)
    }

    /// Defined for shape > 2.
    pub fn variance(&self) -> f64 {
        let a = self.shape;
        self.scale * self.scale / ((a - 1.0) * (a - 1.0) * (a - 2.0))
    }
}

/// Dirichlet distribution. An infinite concentration is accepted and
/// degenerates to the uniform probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Dirichlet {
    pub alpha: Vec<f64>,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Domain("Dirichlet: empty concentration".into()));
        }
        for &a in &alpha {
            if !(a > 0.0) {
                return Err(Error::Domain(format!("Dirichlet: concentration must be positive, got {a}")));
            }
        }
        Ok(Self { alpha })
    }

    pub fn symmetric(alpha: f64, m: usize) -> Result<Self> {
        Self::new(vec![alpha; m])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.alpha.len();
        if self.alpha.iter().all(|a| a.is_infinite()) {
            return vec![1.0 / m as f64; m];
        }
        loop {
            let g: Vec<f64> = self
                .alpha
                .iter()
                .map(|&a| Gamma { shape: a, rate: 1.0 }.sample(rng))
                .collect();
            let s: f64 = g.iter().sum();
            if s > 0.0 && s.is_finite() {
                return g.into_iter().map(|v| v / s).collect();
            }
        }
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        if x.len() != self.alpha.len() {
            return f64::NEG_INFINITY;
        }
        let a0: f64 = self.alpha.iter().sum();
        let norm = ln_gamma(a0) - self.alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        norm + self.alpha.iter().zip(x).map(|(&a, &xi)| (a - 1.0) * xi.ln()).sum::<f64>()
    }
}

/// Bernoulli distribution with success probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bernoulli {
    pub p: f64,
}

impl Bernoulli {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("Bernoulli: p must lie in [0, 1], got {p}")));
        }
        Ok(Self { p })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.p {
            1.0
        } else {
            0.0
        }
    }

    pub fn ln_pmf(&self, y: f64) -> f64 {
        if y == 1.0 {
            self.p.ln()
        } else if y == 0.0 {
            (1.0 - self.p).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Categorical distribution over `0..probs.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    cumulative: Vec<f64>,
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("Categorical: probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("Categorical: probabilities sum to zero".into()));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { cumulative, probs })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    pub fn ln_pmf(&self, k: usize) -> f64 {
        self.probs.get(k).map_or(f64::NEG_INFINITY, |p| p.ln())
    }
}

/// Standard normal draw.
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v, (v / n).sqrt())
    }

    #[test]
    fn inverse_gamma_5_2_moments() {
        let ig = InverseGamma::new(5.0, 2.0).unwrap();
        assert!((ig.mean() - 0.5).abs() < 1e-15);
        assert!((ig.variance() - 4.0 / 48.0).abs() < 1e-15);
        let mut rng = seeded(1);
        let xs: Vec<f64> = (0..200_000).map(|_| ig.sample(&mut rng)).collect();
        let (m, _, se) = moments(&xs);
        assert!((m - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn gamma_sampler_means() {
        for &(k, r) in &[(1.0, 1.0), (2.0, 0.5)] {
            let g = Gamma::new(k, r).unwrap();
            let mut rng = seeded(7);
            let xs: Vec<f64> = (0..1_000_000).map(|_| g.sample(&mut rng)).collect();
            let (m, _, se) = moments(&xs);
            assert!((m - k / r).abs() < 3.0 * se, "k={k} r={r} mean={m}");
        }
    }

    #[test]
    fn dirichlet_uniform_density_is_constant() {
        let d = Dirichlet::symmetric(1.0, 4).unwrap();
        let a = d.ln_pdf(&[0.25, 0.25, 0.25, 0.25]);
        let b = d.ln_pdf(&[0.7, 0.1, 0.1, 0.1]);
        let c = d.ln_pdf(&[0.01, 0.01, 0.01, 0.97]);
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        // ln Γ(4) = ln 6
        assert!((a - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infinite_concentration_is_uniform() {
        let d = Dirichlet::symmetric(f64::INFINITY, 5).unwrap();
        let mut rng = seeded(3);
        assert_eq!(d.sample(&mut rng), vec![0.2; 5]);
    }

    #[test]
    fn domain_errors() {
        assert!(Normal::new(0.0, 0.0).is_err());
        assert!(Gamma::new(-1.0, 1.0).is_err());
        assert!(InverseGamma::new(1.0, f64::NAN).is_err());
        assert!(Laplace::new(0.0, -2.0).is_err());
        assert!(Bernoulli::new(1.5).is_err());
        assert!(Categorical::new(vec![]).is_err());
        assert!(Dirichlet::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn laplace_moments_and_density() {
        let l = Laplace::new(0.0, 3.0).unwrap();
        let mut rng = seeded(11);
        let xs: Vec<f64> = (0..200_000).map(|_| l.sample(&mut rng)).collect();
        let (m, v, se) = moments(&xs);
        assert!(m.abs() < 4.0 * se);
        assert!((v - 18.0).abs() / 18.0 < 0.03);
        // integrates to one
        let h = 0.01;
        let total: f64 = (-6000..6000).map(|i| l.ln_pdf(i as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn log_space_inverse_gamma_matches_change_of_variables() {
        let ig = InverseGamma::new(5.0, 2.0).unwrap();
        for &s in &[-2.0, -0.3, 0.0, 1.1] {
            let direct = ig.ln_pdf(f64::exp(s)) + s;
            assert!((direct - ig.ln_pdf_log(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_frequencies() {
        let c = Categorical::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut rng = seeded(5);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[c.sample(&mut rng)] += 1;
        }
        assert!((counts[1] as f64 / 1e5 - 0.5).abs() < 0.01);
    }
}
