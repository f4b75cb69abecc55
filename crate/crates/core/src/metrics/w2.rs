use super::{canonical_order, check_pair, config_hash, MetricReport};
use crate::{Matrix, Result};
use rand::seq::index::sample;
use rand::Rng;

/// Minimum-cost perfect matching of a square cost matrix (shortest
/// augmenting paths with potentials). Returns `col[i]` matched to row `i`.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Empirical 2-Wasserstein distance between equal-size point sets. The
/// larger set is first subsampled uniformly to the size of the smaller.
/// One-dimensional sets are matched in sorted order, which is optimal.
pub fn wasserstein2<R: Rng + ?Sized>(a: &Matrix, b: &Matrix, rng: &mut R) -> Result<MetricReport> {
    check_pair(a, b)?;
    let n = a.rows().min(b.rows());
    let mut notes = Vec::new();
    let shrink = |m: &Matrix, rng: &mut R| {
        let order = canonical_order(m);
        let mut keep: Vec<usize> = sample(rng, m.rows(), n).into_iter().map(|k| order[k]).collect();
        keep.sort_unstable();
        m.select_rows(&keep)
    };
    let (a, b) = match a.rows().cmp(&b.rows()) {
        std::cmp::Ordering::Greater => {
            notes.push(format!("first set subsampled from {} to {n}", a.rows()));
            (shrink(a, rng), b.clone())
        }
        std::cmp::Ordering::Less => {
            notes.push(format!("second set subsampled from {} to {n}", b.rows()));
            (a.clone(), shrink(b, rng))
        }
        std::cmp::Ordering::Equal => (a.clone(), b.clone()),
    };
    let total = if a.cols() == 1 {
        let mut x = a.column(0);
        let mut y = b.column(0);
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).collect::<Vec<f64>>()
    } else {
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cost[i * n + j] = sq_dist(a.row(i), b.row(j));
            }
        }
        let col = assignment(&cost, n);
        (0..n).map(|i| cost[i * n + col[i]]).collect()
    };
    // Summing the matched costs in sorted order makes the value exactly
    // symmetric in its arguments.
    let mut matched = total;
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    let mut report = MetricReport::single("w2", (total / n as f64).sqrt(), config_hash(&("w2", n)))?;
    report.notes = notes;
    Ok(report)
}
