use serde::{Deserialize, Serialize};

use super::{FeatureValues, TabularDataset};
use crate::error::{Error, Result};

/// Per-column affine map of the training range onto [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub names: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    /// Fit on the numeric features of `train`, in sequence order.
    pub fn fit(train: &TabularDataset) -> Result<Self> {
        let mut s = MinMaxScaler {
            names: Vec::new(),
            mins: Vec::new(),
            maxs: Vec::new(),
        };
        for f in &train.features {
            if let FeatureValues::Numeric(v) = &f.values {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(lo < hi) {
                    return Err(Error::ConstantColumn(f.name.clone()));
                }
                s.names.push(f.name.clone());
                s.mins.push(lo);
                s.maxs.push(hi);
            }
        }
        Ok(s)
    }

    pub fn scale_value(&self, column: usize, x: f64) -> f64 {
        let (lo, hi) = (self.mins[column], self.maxs[column]);
        (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    /// Scale every numeric feature of `data` by name; values outside the
    /// training range are clamped.
    pub fn transform(&self, data: &TabularDataset) -> Result<TabularDataset> {
        let mut out = data.clone();
        for f in &mut out.features {
            if let FeatureValues::Numeric(v) = &mut f.values {
                let col = self
                    .names
                    .iter()
                    .position(|n| *n == f.name)
                    .ok_or_else(|| Error::Schema(format!("scaler has no column `{}`", f.name)))?;
                for x in v.iter_mut() {
                    *x = self.scale_value(col, *x);
                }
            }
        }
        Ok(out)
    }
}

/// Fit a [`MinMaxScaler`] on `train` and apply it to `train` and each of `others`.
pub fn scale_numeric(
    train: &TabularDataset,
    others: &[&TabularDataset],
) -> Result<(TabularDataset, Vec<TabularDataset>, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(train)?;
    let t = scaler.transform(train)?;
    let rest = others
        .iter()
        .map(|d| scaler.transform(d))
        .collect::<Result<_>>()?;
    Ok((t, rest, scaler))
}

/// Standardization of a regression target with population statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::ZeroVariance);
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 0.0) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    /// No-op scaler, used for classification targets.
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn transform(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn transform_all(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.transform(v)).collect()
    }

    pub fn inverse_all(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.inverse(v)).collect()
    }
}

/// Fit target statistics on `train` and standardize `train` and `others`.
pub fn normalize_target(
    train: &TabularDataset,
    others: &[&TabularDataset],
) -> Result<(TabularDataset, Vec<TabularDataset>, TargetScaler)> {
    if !train.task.is_regression() {
        return Err(Error::InvalidArgument(
            "target normalization applies to regression tasks only".into(),
        ));
    }
    let s = TargetScaler::fit(&train.target)?;
    let apply = |d: &TabularDataset| {
        let mut d = d.clone();
        d.target = s.transform_all(&d.target);
        d
    };
    Ok((apply(train), others.iter().map(|d| apply(d)).collect(), s))
}
