//! Independent reference implementations and published fixtures shared by the
//! integration suites. Nothing here calls into the code under test beyond
//! plain data types.
#![allow(dead_code)]

use mambular::numerics::kernels::ScanInputs;
use mambular::numerics::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Direct evaluation of the scan recurrence with explicit state vectors.
pub fn naive_scan(inp: &ScanInputs<'_>) -> Tensor {
    let (n, j, e) = (inp.u.shape()[0], inp.u.shape()[1], inp.u.shape()[2]);
    let s = inp.a.shape()[1];
    let mut out = Tensor::zeros(&[n, j, e]);
    for b in 0..n {
        let mut h = vec![vec![0.0; s]; e];
        for t in 0..j {
            for ch in 0..e {
                let dt = inp.delta.get(&[b, t, ch]);
                let u = inp.u.get(&[b, t, ch]);
                let mut y = inp.alpha.get(&[ch]) * u;
                for st in 0..s {
                    h[ch][st] = (dt * inp.a.get(&[ch, st])).exp() * h[ch][st]
                        + dt * inp.b.get(&[b, t, st]) * u;
                    y += h[ch][st] * inp.c.get(&[b, t, st]);
                }
                out.set(&[b, t, ch], y);
            }
        }
    }
    out
}

/// Impurity times size of a node, recomputed from scratch.
fn node_cost(y: &[f64], gini: bool) -> f64 {
    let n = y.len() as f64;
    if gini {
        let p = y.iter().sum::<f64>() / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    } else {
        let m = y.iter().sum::<f64>() / n;
        y.iter().map(|v| (v - m).powi(2)).sum()
    }
}

/// Exhaustive best split of one node: `(gain, threshold, left, right)`.
fn exhaustive_split(
    rows: &[(f64, f64)],
    min_leaf: usize,
    gini: bool,
) -> Option<(f64, f64, Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let parent = node_cost(&ys, gini);
    let floor = 1e-12 * ys.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut distinct: Vec<f64> = rows.iter().map(|r| r.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in distinct.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let left: Vec<f64> = rows.iter().filter(|r| r.0 < t).map(|r| r.1).collect();
        let right: Vec<f64> = rows.iter().filter(|r| r.0 >= t).map(|r| r.1).collect();
        if left.len() < min_leaf || right.len() < min_leaf {
            continue;
        }
        let gain = parent - node_cost(&left, gini) - node_cost(&right, gini);
        if gain > floor && best.map_or(true, |b| gain > b.0) {
            best = Some((gain, t));
        }
    }
    let (gain, t) = best?;
    let left = rows.iter().copied().filter(|r| r.0 < t).collect();
    let right = rows.iter().copied().filter(|r| r.0 >= t).collect();
    Some((gain, t, left, right))
}

/// Thresholds of a best-first tree grown by exhaustive search over every node.
pub fn exhaustive_tree_thresholds(
    x: &[f64],
    y: &[f64],
    max_bins: usize,
    min_leaf: usize,
    gini: bool,
) -> Vec<f64> {
    let rows: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    let mut leaves = vec![rows];
    let mut thresholds = Vec::new();
    while thresholds.len() + 1 < max_bins {
        let mut pick: Option<(usize, f64, f64)> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            if let Some((gain, t, _, _)) = exhaustive_split(leaf, min_leaf, gini) {
                let better = match pick {
                    None => true,
                    Some((_, g, bt)) => gain > g || (gain == g && t < bt),
                };
                if better {
                    pick = Some((i, gain, t));
                }
            }
        }
        let Some((i, _, t)) = pick else { break };
        let leaf = leaves.swap_remove(i);
        let (_, _, left, right) = exhaustive_split(&leaf, min_leaf, gini).unwrap();
        thresholds.push(t);
        leaves.push(left);
        leaves.push(right);
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds
}

/// `∫ (F(x) − 1{x ≥ y})² dx` by the trapezoid rule, with `F` itself
/// accumulated from the density on the same grid.
pub fn crps_quadrature(mu: f64, sigma: f64, y: f64) -> f64 {
    const SPAN: f64 = 14.0;
    const STEPS: usize = 200_000;
    let lo = (mu - SPAN * sigma).min(y - sigma);
    let hi = (mu + SPAN * sigma).max(y + sigma);
    let pdf = |x: f64| {
        let z = (x - mu) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut total = 0.0;
    let mut cdf = 0.0;
    for (a, b, step) in [(lo, y, 0.0), (y, hi, 1.0)] {
        let h = (b - a) / STEPS as f64;
        let mut x0 = a;
        let mut f0 = (cdf - step) * (cdf - step);
        for i in 1..=STEPS {
            let x1 = a + h * i as f64;
            cdf += 0.5 * h * (pdf(x0) + pdf(x1));
            let f1 = (cdf - step) * (cdf - step);
            total += 0.5 * h * (f0 + f1);
            x0 = x1;
            f0 = f1;
        }
    }
    total
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Published per-dataset p-values of the Mambular versus XGBoost comparison.
pub const PUBLISHED_P_VALUES: [f64; 12] = [
    0.0079, 0.0870, 0.4865, 1.3e-07, 0.6287, 0.3991, 0.1999, 0.7883, 0.7930, 0.0192, 0.0120,
    0.010,
];

/// The values rejected at q = 0.10 in the published conclusion.
pub const PUBLISHED_REJECTIONS: [f64; 5] = [1.3e-07, 0.0079, 0.010, 0.0120, 0.0192];

/// Single-split regression results (MSE) of the five strongest models on
/// fourteen additional datasets, with the published average rank.
pub const REGRESSION_BENCHMARK: [(&str, [f64; 14], f64); 5] = [
    (
        "Mambular",
        [0.021, 0.701, 0.272, 0.057, 0.595, 0.168, 0.018, 0.137, 0.085, 0.003, 0.402, 0.015, 0.318, 0.003],
        1.79,
    ),
    (
        "FT-Transformer",
        [0.028, 0.701, 0.301, 0.205, 0.609, 0.451, 0.089, 0.149, 0.101, 0.009, 0.542, 0.033, 0.360, 0.045],
        4.36,
    ),
    (
        "CatBoost",
        [0.032, 0.702, 0.245, 0.041, 0.597, 0.150, 0.004, 0.110, 0.078, 0.005, 0.390, 0.018, 0.297, 0.013],
        1.79,
    ),
    (
        "LightGBM",
        [0.048, 0.707, 0.263, 0.059, 0.599, 0.239, 0.024, 0.140, 0.091, 0.009, 0.452, 0.031, 0.302, 0.013],
        3.26,
    ),
    (
        "XGBoost",
        [0.039, 0.752, 0.281, 0.078, 0.635, 0.259, 0.004, 0.161, 0.098, 0.006, 0.403, 0.024, 0.329, 0.013],
        3.71,
    ),
];
