//! Unconstrained latent vectors and their block layouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Map from unconstrained coordinates to the constrained parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Positive parameter stored as its logarithm.
    Log,
    /// Packed lower-triangular `rows x cols` matrix (row-major over the
    /// entries with `j <= i`); diagonal entries are stored as logarithms.
    AbsDiagLog { rows: usize, cols: usize },
    /// Probability vector of length `span + 1` stored as log-ratios against
    /// the last coordinate.
    SoftmaxAnchor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub span: usize,
    pub transform: Transform,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub blocks: Vec<Block>,
}

/// Number of free entries in a lower-triangular `rows x cols` matrix.
pub fn lower_tri_len(rows: usize, cols: usize) -> usize {
    (0..rows).map(|i| (i + 1).min(cols)).sum()
}

/// `(i, j)` of each packed lower-triangular entry, in storage order.
pub fn lower_tri_indices(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|i| (0..=i.min(cols.saturating_sub(1))).map(move |j| (i, j)))
        .filter(|&(i, j)| j < cols && j <= i)
        .collect()
}

impl LatentLayout {
    pub fn push(&mut self, name: &str, span: usize, transform: Transform) -> &mut Self {
        self.blocks.push(Block { name: name.to_string(), span, transform });
        self
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.span).sum()
    }

    /// Start offset and block for `name`.
    pub fn find(&self, name: &str) -> Option<(usize, &Block)> {
        let mut off = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some((off, b));
            }
            off += b.span;
        }
        None
    }

    /// First `n` blocks as a layout.
    pub fn prefix(&self, n: usize) -> LatentLayout {
        LatentLayout { blocks: self.blocks[..n].to_vec() }
    }

    /// Names of the unconstrained coordinates, e.g. `beta[0]`, `log_sigma2`.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for b in &self.blocks {
            let name = match b.transform {
                Transform::Log => format!("log_{}", b.name),
                _ => b.name.clone(),
            };
            if b.span == 1 {
                names.push(name);
            } else {
                names.extend((0..b.span).map(|i| format!("{name}[{i}]")));
            }
        }
        names
    }

    /// Constrained values, block by block. `SoftmaxAnchor` blocks expand to
    /// `span + 1` probabilities.
    pub fn constrain(&self, unc: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(unc)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for b in &self.blocks {
            let x = &unc[off..off + b.span];
            off += b.span;
            out.push(match b.transform {
                Transform::Identity => x.to_vec(),
                Transform::Log => x.iter().map(|v| v.exp()).collect(),
                Transform::AbsDiagLog { rows, cols } => lower_tri_indices(rows, cols)
                    .iter()
                    .zip(x)
                    .map(|(&(i, j), &v)| if i == j { v.exp() } else { v })
                    .collect(),
                Transform::SoftmaxAnchor => softmax_anchor(x),
            });
        }
        Ok(out)
    }

    /// Inverse of [`Self::constrain`].
    pub fn unconstrain(&self, blocks: &[Vec<f64>]) -> Result<Vec<f64>> {
        if blocks.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "expected {} blocks, got {}",
                self.blocks.len(),
                blocks.len()
            )));
        }
        let mut out = Vec::with_capacity(self.dim());
        for (b, v) in self.blocks.iter().zip(blocks) {
            let want = if b.transform == Transform::SoftmaxAnchor { b.span + 1 } else { b.span };
            if v.len() != want {
                return Err(Error::Dimension(format!("block {} expects {want} values, got {}", b.name, v.len())));
            }
            match b.transform {
                Transform::Identity => out.extend_from_slice(v),
                Transform::Log => out.extend(v.iter().map(|x| x.ln())),
                Transform::AbsDiagLog { rows, cols } => out.extend(
                    lower_tri_indices(rows, cols)
                        .iter()
                        .zip(v)
                        .map(|(&(i, j), &x)| if i == j { x.ln() } else { x }),
                ),
                Transform::SoftmaxAnchor => {
                    let last = v[b.span].ln();
                    out.extend(v[..b.span].iter().map(|x| x.ln() - last));
                }
            }
        }
        Ok(out)
    }

    fn check(&self, unc: &[f64]) -> Result<()> {
        if unc.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "latent vector has length {}, layout expects {}",
                unc.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `softmax(eta_1, .., eta_{M-1}, 0)`.
pub fn softmax_anchor(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().copied().fold(0.0f64, f64::max);
    let mut e: Vec<f64> = eta.iter().map(|v| (v - max).exp()).collect();
    e.push((-max).exp());
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

/// A latent vector in unconstrained coordinates together with its layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub values: Vec<f64>,
    pub layout: LatentLayout,
}

impl LatentVector {
    pub fn new(values: Vec<f64>, layout: LatentLayout) -> Result<Self> {
        layout.check(&values)?;
        Ok(Self { values, layout })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn constrained(&self) -> Result<Vec<Vec<f64>>> {
        self.layout.constrain(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> LatentLayout {
        let mut l = LatentLayout::default();
        l.push("beta", 3, Transform::Identity)
            .push("log_sigma2", 1, Transform::Log)
            .push("W", lower_tri_len(4, 2), Transform::AbsDiagLog { rows: 4, cols: 2 })
            .push("phi", 2, Transform::SoftmaxAnchor);
        l
    }

    #[test]
    fn lower_tri_packing() {
        assert_eq!(lower_tri_len(4, 2), 1 + 2 + 2 + 2);
        assert_eq!(lower_tri_indices(3, 3), vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
        assert_eq!(lower_tri_indices(4, 2).len(), lower_tri_len(4, 2));
    }

    #[test]
    fn constrained_values_are_positive_where_required() {
        let l = layout();
        let unc = vec![-1.0; l.dim()];
        let c = l.constrain(&unc).unwrap();
        assert!(c[1][0] > 0.0);
        for (&(i, j), v) in lower_tri_indices(4, 2).iter().zip(&c[2]) {
            if i == j {
                assert!(*v > 0.0);
            }
        }
        assert!((c[3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(l.constrain(&unc[1..]).is_err());
    }

    proptest! {
        #[test]
        fn unconstrain_inverts_constrain(v in proptest::collection::vec(-5.0f64..5.0, 13)) {
            let l = layout();
            prop_assert_eq!(l.dim(), 13);
            let back = l.unconstrain(&l.constrain(&v).unwrap()).unwrap();
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
