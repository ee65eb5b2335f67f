//! Synthetic regression data with known interactions, used to study the
//! effect of feature ordering.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Feature, FeatureValues, TabularDataset, Task};
use crate::rng;

pub const SYNTHETIC_ROWS: usize = 5000;
pub const NUMERIC_NAMES: [&str; 5] = ["x1", "x2", "x3", "x4", "x5"];
pub const CATEGORICAL_NAMES: [&str; 5] = ["A", "B", "C", "D", "E"];
pub const LEVELS: [&str; 4] = ["l0", "l1", "l2", "l3"];
/// Additive score of each categorical level.
pub const CATEGORY_SCORES: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];
pub const CORRELATED_PAIRS: [(usize, usize, f64); 2] = [(0, 1, 0.8), (3, 4, 0.6)];
pub const NOISE_STD: f64 = 1.0;

/// Product term `weight * f(left) * f(right)`, where categorical factors
/// enter through their level score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub left: String,
    pub right: String,
    pub weight: f64,
}

/// Generating process of [`generate_synthetic_ordering_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub seed: u64,
    pub rows: usize,
    pub numeric_coefficients: Vec<(String, f64)>,
    pub categorical_coefficients: Vec<(String, f64)>,
    pub category_scores: Vec<(String, f64)>,
    pub interactions: Vec<Interaction>,
    pub correlated_pairs: Vec<(String, String, f64)>,
    pub noise_std: f64,
}

fn interactions() -> Vec<Interaction> {
    [("x1", "x2", 1.5), ("x3", "A", 1.0), ("B", "C", 0.8)]
        .into_iter()
        .map(|(l, r, w)| Interaction {
            left: l.into(),
            right: r.into(),
            weight: w,
        })
        .collect()
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in v {
        *x = (*x - mean) / std;
    }
}

/// 5000 rows: five numeric features (two correlated pairs, standardized) and
/// five four-level categoricals, with target
/// `sum x + sum score + 1.5 x1 x2 + 1.0 x3 A + 0.8 B C + N(0, 1)`.
pub fn generate_synthetic_ordering_dataset(seed: u64) -> (TabularDataset, SyntheticGroundTruth) {
    let n = SYNTHETIC_ROWS;
    let mut r = rng::stream(seed, "synthetic");
    let mut num: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    for &(a, b, rho) in &CORRELATED_PAIRS {
        let c = (1.0 - rho * rho).sqrt();
        for i in 0..n {
            num[b][i] = rho * num[a][i] + c * num[b][i];
        }
    }
    for col in &mut num {
        standardize(col);
    }
    let cat: Vec<Vec<usize>> = (0..5)
        .map(|_| (0..n).map(|_| r.gen_range(0..LEVELS.len())).collect())
        .collect();

    let value = |name: &str, i: usize| -> f64 {
        if let Some(j) = NUMERIC_NAMES.iter().position(|&m| m == name) {
            num[j][i]
        } else {
            let j = CATEGORICAL_NAMES.iter().position(|&m| m == name).expect("known name");
            CATEGORY_SCORES[cat[j][i]]
        }
    };
    let terms = interactions();
    let target: Vec<f64> = (0..n)
        .map(|i| {
            let linear: f64 = NUMERIC_NAMES
                .iter()
                .chain(&CATEGORICAL_NAMES)
                .map(|name| value(name, i))
                .sum();
            let inter: f64 = terms
                .iter()
                .map(|t| t.weight * value(&t.left, i) * value(&t.right, i))
                .sum();
            let noise: f64 = StandardNormal.sample(&mut r);
            linear + inter + NOISE_STD * noise
        })
        .collect();

    let mut features: Vec<Feature> = NUMERIC_NAMES
        .iter()
        .zip(num)
        .map(|(name, v)| Feature {
            name: (*name).into(),
            values: FeatureValues::Numeric(v),
        })
        .collect();
    features.extend(CATEGORICAL_NAMES.iter().zip(&cat).map(|(name, ids)| Feature {
        name: (*name).into(),
        values: FeatureValues::Categorical(ids.iter().map(|&k| LEVELS[k].to_string()).collect()),
    }));
    let ds = TabularDataset::new(features, "y", target, Task::Regression)
        .expect("generated columns have equal length");
    let truth = SyntheticGroundTruth {
        seed,
        rows: n,
        numeric_coefficients: NUMERIC_NAMES.iter().map(|s| ((*s).into(), 1.0)).collect(),
        categorical_coefficients: CATEGORICAL_NAMES.iter().map(|s| ((*s).into(), 1.0)).collect(),
        category_scores: LEVELS
            .iter()
            .zip(CATEGORY_SCORES)
            .map(|(l, s)| ((*l).into(), s))
            .collect(),
        interactions: terms,
        correlated_pairs: CORRELATED_PAIRS
            .iter()
            .map(|&(a, b, rho)| (NUMERIC_NAMES[a].into(), NUMERIC_NAMES[b].into(), rho))
            .collect(),
        noise_std: NOISE_STD,
    };
    (ds, truth)
}
