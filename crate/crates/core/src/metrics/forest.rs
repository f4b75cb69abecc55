use crate::rng::stream;
use crate::{Error, Matrix, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    pub n_trees: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` is the rounded-up square root of the dimension.
    #[serde(default)]
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_samples_split: 2, max_features: None, bootstrap: true }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Bagged Gini classification trees.
#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<Vec<Node>>,
    dim: usize,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [bool],
    cfg: &'a RfConfig,
    max_features: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, bool)>,
}

fn gini(pos: f64, n: f64) -> f64 {
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count() as f64;
        self.nodes.push(Node::Leaf { p1: pos / idx.len() as f64 });
        self.nodes.len() - 1
    }

    /// Best split of `idx` on `feature`: (weighted child impurity, threshold),
    /// or `None` when the feature is constant on the node.
    fn best_on(&mut self, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
        let s = &mut self.scratch;
        s.clear();
        s.extend(idx.iter().map(|&i| (self.x.get(i, feature), self.y[i])));
        s.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if s[0].0 == s[s.len() - 1].0 {
            return None;
        }
        let n = s.len() as f64;
        let total_pos = s.iter().filter(|v| v.1).count() as f64;
        let mut left_pos = 0.0;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..s.len() - 1 {
            left_pos += s[k].1 as u8 as f64;
            if s[k].0 == s[k + 1].0 {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let imp = nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr);
            if imp < best.0 {
                let mut t = 0.5 * (s[k].0 + s[k + 1].0);
                if t >= s[k + 1].0 {
                    t = s[k].0;
                }
                best = (imp, t);
            }
        }
        Some(best)
    }

    fn build<R: Rng>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let pure = pos == 0 || pos == idx.len();
        if pure || idx.len() < self.cfg.min_samples_split || self.cfg.max_depth.is_some_and(|m| depth >= m) {
            return self.leaf(idx);
        }
        // Draw features in random order until `max_features` non-constant
        // ones have been examined.
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut seen = 0;
        for &f in &features {
            if seen == self.max_features {
                break;
            }
            if let Some((imp, t)) = self.best_on(idx, f) {
                seen += 1;
                if best.is_none_or(|b| imp < b.0) {
                    best = Some((imp, f, t));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        let mut split = 0;
        for k in 0..idx.len() {
            if self.x.get(idx[k], feature) <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p1: f64::NAN });
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

impl RandomForest {
    /// Fit on rows of `x` with boolean labels. Tree `i` uses rng stream `i` of `seed`.
    pub fn fit(x: &Matrix, y: &[bool], cfg: &RfConfig, seed: u64) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension(format!("{} rows for {} labels", x.rows(), y.len())));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::Metric("random forest needs both classes in the training set".into()));
        }
        if cfg.n_trees == 0 || cfg.min_samples_split < 2 || cfg.max_features == Some(0) {
            return Err(Error::Config(format!("invalid forest configuration {cfg:?}")));
        }
        let d = x.cols();
        let max_features = cfg.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d);
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(seed, t as u64);
                let n = x.rows();
                let mut idx: Vec<usize> =
                    if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
                let mut b = Builder { x, y, cfg, max_features, nodes: Vec::new(), scratch: Vec::with_capacity(n) };
                b.build(&mut idx, 0, &mut rng);
                b.nodes
            })
            .collect();
        Ok(Self { trees, dim: d })
    }

    /// Fraction of trees voting for class 1 (a tied leaf casts half a vote).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim {
            return Err(Error::Dimension(format!("forest fitted on {} features, got {}", self.dim, x.cols())));
        }
        let n_trees = self.trees.len() as f64;
        Ok(x.iter_rows()
            .map(|row| {
                self.trees
                    .iter()
                    .map(|t| {
                        let mut k = 0;
                        loop {
                            match t[k] {
                                Node::Leaf { p1 } => {
                                    break if p1 > 0.5 {
                                        1.0
                                    } else if p1 == 0.5 {
                                        0.5
                                    } else {
                                        0.0
                                    };
                                }
                                Node::Split { feature, threshold, left, right } => {
                                    k = if row[feature] <= threshold { left } else { right };
                                }
                            }
                        }
                    })
                    .sum::<f64>()
                    / n_trees
            })
            .collect())
    }
}

pub fn random_forest_fit_predict<R: Rng + ?Sized>(
    train: &Matrix,
    labels: &[bool],
    test: &Matrix,
    cfg: &RfConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    RandomForest::fit(train, labels, cfg, rng.random())?.predict(test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{c2st::cross_val_auc, roc_auc, Classifier};
    use crate::probmodels::distributions::std_normal;
    use crate::rng::seeded;

    #[test]
    fn separable_single_feature() {
        let train = Matrix::from_vec(8, 1, vec![0.0, 0.1, 0.2, 0.3, 1.0, 1.1, 1.2, 1.3]);
        let labels = [false, false, false, false, true, true, true, true];
        let test = Matrix::from_vec(4, 1, vec![-1.0, 0.25, 1.05, 3.0]);
        let s = random_forest_fit_predict(&train, &labels, &test, &RfConfig::default(), &mut seeded(1)).unwrap();
        // a bootstrap that misses one class entirely votes constantly, so only
        // the ordering and the extremes are exact
        assert!(s[0] <= s[1] && s[1] < s[2] && s[2] <= s[3]);
        assert_eq!(roc_auc(&s, &[false, false, true, true]).unwrap(), 1.0);
        let no_bag = RfConfig { bootstrap: false, ..RfConfig::default() };
        let s = random_forest_fit_predict(&train, &labels, &test, &no_bag, &mut seeded(1)).unwrap();
        assert_eq!(s, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn coin_flip_labels_have_no_signal() {
        let mut rng = seeded(2);
        let x = Matrix::from_vec(1000, 2, (0..2000).map(|_| std_normal(&mut rng)).collect());
        let y: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
        let folds = cross_val_auc(&x, &y, &Classifier::RandomForest(RfConfig::default()), 10, &mut rng).unwrap();
        let auc = folds.iter().sum::<f64>() / folds.len() as f64;
        assert!((0.4..=0.6).contains(&auc), "{auc}");
    }

    #[test]
    fn stumps_cannot_learn_xor_but_full_trees_can() {
        let mut rng = seeded(3);
        let x = Matrix::from_vec(400, 2, (0..800).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        let y: Vec<bool> = (0..400).map(|i| x.get(i, 0) * x.get(i, 1) > 0.0).collect();
        let auc = |cfg: RfConfig, rng: &mut crate::rng::StreamRng| {
            let f = cross_val_auc(&x, &y, &Classifier::RandomForest(cfg), 10, rng).unwrap();
            f.iter().sum::<f64>() / f.len() as f64
        };
        let stump = auc(RfConfig { max_depth: Some(1), ..RfConfig::default() }, &mut rng);
        let full = auc(RfConfig::default(), &mut rng);
        assert!((stump - 0.5).abs() <= 0.1, "stumps {stump}");
        assert!(full >= 0.9, "full {full}");
    }

    #[test]
    fn fitting_is_seed_deterministic_and_validated() {
        let mut rng = seeded(4);
        let x = Matrix::from_vec(50, 3, (0..150).map(|_| std_normal(&mut rng)).collect());
        let y: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let a = RandomForest::fit(&x, &y, &RfConfig::default(), 7).unwrap().predict(&x).unwrap();
        let b = RandomForest::fit(&x, &y, &RfConfig::default(), 7).unwrap().predict(&x).unwrap();
        assert_eq!(a, b);
        assert!(RandomForest::fit(&x, &[true; 50], &RfConfig::default(), 7).is_err());
        assert!(RandomForest::fit(&x, &y[..10], &RfConfig::default(), 7).is_err());
    }
}
