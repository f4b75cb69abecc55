use super::{canonical_order, check_pair, config_hash, mlp_fit_predict, random_forest_fit_predict, roc_auc};
use super::{MetricReport, MlpConfig, RfConfig};
use crate::rng::stream;
use crate::{Error, Matrix, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    RandomForest(RfConfig),
    Mlp(MlpConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2stConfig {
    pub classifier: Classifier,
    pub folds: usize,
}

impl Default for C2stConfig {
    fn default() -> Self {
        Self { classifier: Classifier::RandomForest(RfConfig::default()), folds: 10 }
    }
}

impl C2stConfig {
    pub fn mlp() -> Self {
        Self { classifier: Classifier::Mlp(MlpConfig::default()), ..Self::default() }
    }
}

/// Fold index for every point: each class is shuffled and dealt round-robin.
pub fn stratified_folds<R: Rng + ?Sized>(labels: &[bool], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut fold = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Metric(format!(
                "class {} has {} points for {k} folds; some fold would hold a single class",
                class as u8,
                idx.len()
            )));
        }
        idx.shuffle(rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// Held-out ROC-AUC of each fold of a stratified `k`-fold split.
pub fn cross_val_auc<R: Rng + ?Sized>(
    x: &Matrix,
    labels: &[bool],
    classifier: &Classifier,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.rows() != labels.len() {
        return Err(Error::Dimension(format!("{} rows for {} labels", x.rows(), labels.len())));
    }
    let fold = stratified_folds(labels, k, rng)?;
    let seed: u64 = rng.random();
    (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..x.rows()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..x.rows()).filter(|&i| fold[i] == f).collect();
            let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let yte: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
            let (xtr, xte) = (x.select_rows(&train), x.select_rows(&test));
            let mut frng = stream(seed, f as u64);
            let scores = match classifier {
                Classifier::RandomForest(c) => random_forest_fit_predict(&xtr, &ytr, &xte, c, &mut frng)?,
                Classifier::Mlp(c) => mlp_fit_predict(&xtr, &ytr, &xte, c, &mut frng)?,
            };
            roc_auc(&scores, &yte)
        })
        .collect()
}

/// Classifier two-sample test: mean held-out ROC-AUC of a classifier
/// separating `a` (label 0) from `b` (label 1). 0.5 means indistinguishable.
pub fn c2st<R: Rng + ?Sized>(a: &Matrix, b: &Matrix, cfg: &C2stConfig, rng: &mut R) -> Result<MetricReport> {
    check_pair(a, b)?;
    if a.rows() + b.rows() < cfg.folds {
        return Err(Error::Metric(format!("{} points for {} folds", a.rows() + b.rows(), cfg.folds)));
    }
    let (oa, ob) = (canonical_order(a), canonical_order(b));
    let x = Matrix::vstack(&[&a.select_rows(&oa), &b.select_rows(&ob)]);
    let labels: Vec<bool> = (0..x.rows()).map(|i| i >= a.rows()).collect();
    let folds = cross_val_auc(&x, &labels, &cfg.classifier, cfg.folds, rng)?;
    MetricReport::from_parts("c2st", folds, config_hash(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodels::distributions::std_normal;
    use crate::rng::seeded;

    fn normals(n: usize, d: usize, shift: f64, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| std_normal(rng) + shift).collect())
    }

    #[test]
    fn separable_sets_score_one() {
        let a = Matrix::zeros(50, 3);
        let b = Matrix::filled(50, 3, 1.0);
        for cfg in [C2stConfig::default(), C2stConfig::mlp()] {
            let r = c2st(&a, &b, &cfg, &mut seeded(1)).unwrap();
            assert_eq!(r.value, 1.0, "{cfg:?}");
        }
    }

    #[test]
    fn same_distribution_is_near_one_half() {
        let mut rng = seeded(2);
        let a = normals(1000, 5, 0.0, &mut rng);
        let b = normals(1000, 5, 0.0, &mut rng);
        let r = c2st(&a, &b, &C2stConfig::default(), &mut rng).unwrap();
        assert!((0.45..=0.55).contains(&r.value), "{}", r.value);
        assert_eq!(r.parts.len(), 10);
        let m = c2st(&a, &b, &C2stConfig::mlp(), &mut rng).unwrap();
        assert!((m.value - 0.5).abs() <= 0.06, "{}", m.value);
    }

    #[test]
    fn auc_grows_with_the_shift() {
        let mut means = Vec::new();
        for delta in [0.0, 1.0, 3.0] {
            let mut total = 0.0;
            for seed in 0..20 {
                let mut rng = seeded(100 + seed);
                let a = normals(500, 1, 0.0, &mut rng);
                let b = normals(500, 1, delta, &mut rng);
                let cfg = C2stConfig { classifier: Classifier::RandomForest(RfConfig { n_trees: 20, ..RfConfig::default() }), folds: 5 };
                total += c2st(&a, &b, &cfg, &mut rng).unwrap().value;
            }
            means.push(total / 20.0);
        }
        assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut rng = seeded(5);
        let a = normals(60, 2, 0.0, &mut rng);
        let b = normals(60, 2, 0.5, &mut rng);
        let rev = b.select_rows(&(0..60).rev().collect::<Vec<_>>());
        let x = c2st(&a, &b, &C2stConfig::default(), &mut seeded(9)).unwrap();
        let y = c2st(&a, &rev, &C2stConfig::default(), &mut seeded(9)).unwrap();
        assert_eq!(x.value, y.value);
    }

    #[test]
    fn invalid_inputs() {
        let a = Matrix::zeros(5, 2);
        assert!(c2st(&a, &Matrix::zeros(5, 3), &C2stConfig::default(), &mut seeded(0)).is_err());
        // 5 points per class cannot fill 10 stratified folds
        assert!(matches!(c2st(&a, &Matrix::filled(5, 2, 1.0), &C2stConfig::default(), &mut seeded(0)), Err(Error::Metric(_))));
        let folds = stratified_folds(&[true, false, true, false, true, false], 3, &mut seeded(0)).unwrap();
        for f in 0..3 {
            let members: Vec<usize> = (0..6).filter(|&i| folds[i] == f).collect();
            assert_eq!(members.len(), 2);
            assert_ne!(members[0] % 2, members[1] % 2);
        }
    }
}
