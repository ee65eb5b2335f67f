//! Piecewise linear encoding of numeric features on decision-tree bins, and
//! the fitted preprocessing pipeline that turns a dataset into model inputs.

mod tree;

use serde::{Deserialize, Serialize};

pub use tree::{fit_tree_bins, BinBoundaries, PleConfig, TreeCriterion, DEFAULT_MIN_LEAF};

use crate::data::{
    ColumnKind, FeatureValues, MinMaxScaler, TabularDataset, Task, TargetScaler, Vocabulary,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Encode `x` against `bins`, zero-padded to `width`.
///
/// Component `t` is 0 below bin `t`, 1 at or above its upper edge, and the
/// linear fraction `(x - b_{t-1}) / (b_t - b_{t-1})` inside it.
pub fn ple_encode(x: f64, bins: &BinBoundaries, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    ple_encode_into(x, bins, &mut out);
    out
}

fn ple_encode_into(x: f64, bins: &BinBoundaries, out: &mut [f64]) {
    let edges = bins.edges();
    for (t, slot) in out.iter_mut().enumerate().take(bins.n_bins()) {
        let (lo, hi) = (edges[t], edges[t + 1]);
        *slot = if x < lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            (x - lo) / (hi - lo)
        };
    }
}

/// Token slot of one sequence position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "index")]
pub enum Slot {
    /// Index into the numeric block.
    Numeric(usize),
    /// Index into the categorical block.
    Categorical(usize),
}

/// Model-ready inputs for `n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedData {
    /// `[n, J_num, width]` PLE vectors.
    pub numeric: Tensor,
    /// Row-major `[n, J_cat]` vocabulary ids.
    pub categorical: Vec<usize>,
    pub n_categorical: usize,
    /// Transformed target (standardized for regression tasks).
    pub target: Vec<f64>,
}

impl EncodedData {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_numeric(&self) -> usize {
        self.numeric.shape()[1]
    }

    /// Rows `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> EncodedData {
        let (jn, w) = (self.numeric.shape()[1], self.numeric.shape()[2]);
        let block = jn * w;
        let mut num = Vec::with_capacity(rows.len() * block);
        let mut cat = Vec::with_capacity(rows.len() * self.n_categorical);
        for &r in rows {
            num.extend_from_slice(&self.numeric.data()[r * block..(r + 1) * block]);
            cat.extend_from_slice(
                &self.categorical[r * self.n_categorical..(r + 1) * self.n_categorical],
            );
        }
        EncodedData {
            numeric: Tensor::new(vec![rows.len(), jn, w], num).expect("consistent block sizes"),
            categorical: cat,
            n_categorical: self.n_categorical,
            target: rows.iter().map(|&r| self.target[r]).collect(),
        }
    }
}

/// Everything fitted on a training split: numeric ranges, PLE bins,
/// categorical vocabularies and target statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub task: Task,
    /// Feature names in sequence order.
    pub names: Vec<String>,
    pub slots: Vec<Slot>,
    pub scaler: MinMaxScaler,
    /// One per numeric feature, in numeric-block order.
    pub bins: Vec<BinBoundaries>,
    pub vocabs: Vec<Vocabulary>,
    pub target: TargetScaler,
    pub width: usize,
}

impl Preprocessor {
    pub fn fit(train: &TabularDataset, ple: &PleConfig) -> Result<Self> {
        ple.validate()?;
        let scaler = MinMaxScaler::fit(train)?;
        let target = if train.task.is_regression() {
            TargetScaler::fit(&train.target)?
        } else {
            TargetScaler::identity()
        };
        let y = target.transform_all(&train.target);
        let mut slots = Vec::new();
        let mut bins = Vec::new();
        let mut vocabs = Vec::new();
        for f in &train.features {
            match &f.values {
                FeatureValues::Numeric(v) => {
                    let col = bins.len();
                    let scaled: Vec<f64> = v.iter().map(|&x| scaler.scale_value(col, x)).collect();
                    bins.push(fit_tree_bins(&scaled, &y, ple)?);
                    slots.push(Slot::Numeric(col));
                }
                FeatureValues::Categorical(v) => {
                    slots.push(Slot::Categorical(vocabs.len()));
                    vocabs.push(Vocabulary::build(v.iter().map(String::as_str)));
                }
            }
        }
        Ok(Self {
            task: train.task,
            names: train.features.iter().map(|f| f.name.clone()).collect(),
            slots,
            scaler,
            bins,
            vocabs,
            target,
            width: ple.max_bins,
        })
    }

    pub fn n_numeric(&self) -> usize {
        self.bins.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.vocabs.len()
    }

    pub fn n_features(&self) -> usize {
        self.slots.len()
    }

    /// Vocabulary size of each categorical feature, including the unknown id.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.vocabs.iter().map(Vocabulary::len).collect()
    }

    /// Encode `data`, locating features by name.
    pub fn transform(&self, data: &TabularDataset) -> Result<EncodedData> {
        let n = data.n_rows();
        let (jn, jc, w) = (self.n_numeric(), self.n_categorical(), self.width);
        let mut numeric = Tensor::zeros(&[n, jn, w]);
        let mut categorical = vec![0; n * jc];
        for (name, slot) in self.names.iter().zip(&self.slots) {
            let feature = data
                .feature(name)
                .ok_or_else(|| Error::Schema(format!("input lacks feature `{name}`")))?;
            match (slot, &feature.values) {
                (Slot::Numeric(col), FeatureValues::Numeric(v)) => {
                    let nd = numeric.data_mut();
                    for (r, &x) in v.iter().enumerate() {
                        let scaled = self.scaler.scale_value(*col, x);
                        let at = (r * jn + col) * w;
                        ple_encode_into(scaled, &self.bins[*col], &mut nd[at..at + w]);
                    }
                }
                (Slot::Categorical(col), FeatureValues::Categorical(v)) => {
                    for (r, s) in v.iter().enumerate() {
                        categorical[r * jc + col] = self.vocabs[*col].id(s);
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "feature `{name}` changed kind since fitting"
                    )))
                }
            }
        }
        let target = if data.task.is_regression() {
            self.target.transform_all(&data.target)
        } else {
            data.target.clone()
        };
        Ok(EncodedData {
            numeric,
            categorical,
            n_categorical: jc,
            target,
        })
    }

    pub fn kind(&self, position: usize) -> ColumnKind {
        match self.slots[position] {
            Slot::Numeric(_) => ColumnKind::Numeric,
            Slot::Categorical(_) => ColumnKind::Categorical,
        }
    }
}
