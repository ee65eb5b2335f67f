use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{bh_adjusted, paired_t_test, welch_t_test, Direction};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Auc,
    Crps,
    Nll,
}

impl Metric {
    pub fn direction(self) -> Direction {
        match self {
            Metric::Auc => Direction::HigherIsBetter,
            _ => Direction::LowerIsBetter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Auc => "auc",
            Metric::Crps => "crps",
            Metric::Nll => "nll",
        }
    }
}

/// One metric value of one model on one test fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub model: String,
    pub dataset: String,
    pub fold: usize,
    pub metric: Metric,
    pub value: f64,
}

impl FoldResult {
    pub fn write_csv(path: &Path, rows: &[FoldResult]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<FoldResult>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub dataset: String,
    pub metric: Metric,
    pub folds: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single fold.
    pub std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

type Key = (String, String, Metric);

/// Values of each (model, dataset, metric) ordered by fold index.
fn grouped(results: &[FoldResult]) -> BTreeMap<Key, Vec<(usize, f64)>> {
    let mut groups: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.model.clone(), r.dataset.clone(), r.metric))
            .or_default()
            .push((r.fold, r.value));
    }
    for v in groups.values_mut() {
        v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    }
    groups
}

/// Mean and sample standard deviation per (model, dataset, metric).
pub fn aggregate(results: &[FoldResult]) -> Vec<Aggregate> {
    grouped(results)
        .into_iter()
        .map(|((model, dataset, metric), v)| {
            let values: Vec<f64> = v.iter().map(|x| x.1).collect();
            let (mean, std) = mean_std(&values);
            Aggregate {
                model,
                dataset,
                metric,
                folds: values.len(),
                mean,
                std,
                note: (values.len() == 1)
                    .then(|| "single fold; standard deviation undefined".to_string()),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub metric: Metric,
    pub p: f64,
    pub adjusted_p: f64,
    /// Benjamini-Hochberg decision at each of the report's `q_levels`.
    pub reject: Vec<bool>,
    pub winner: String,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_a: String,
    pub model_b: String,
    pub paired: bool,
    pub q_levels: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

/// Per-dataset t-tests of model `a` against model `b` with
/// Benjamini-Hochberg decisions across datasets.
pub fn compare(
    a: &[FoldResult],
    b: &[FoldResult],
    q_levels: &[f64],
    paired: bool,
) -> Result<ComparisonReport> {
    let name = |rs: &[FoldResult], which: &str| -> Result<String> {
        let first = rs
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("no results for model {which}")))?;
        Ok(first.model.clone())
    };
    let (model_a, model_b) = (name(a, "a")?, name(b, "b")?);
    let strip = |m: BTreeMap<Key, Vec<(usize, f64)>>| -> BTreeMap<(String, Metric), Vec<(usize, f64)>> {
        m.into_iter().map(|((_, d, metric), v)| ((d, metric), v)).collect()
    };
    let ga = strip(grouped(a));
    let gb = strip(grouped(b));
    for key in gb.keys() {
        if !ga.contains_key(key) {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` ({}) missing from results of {model_a}",
                key.0,
                key.1.name()
            )));
        }
    }
    let mut rows = Vec::new();
    for (key, va) in &ga {
        let vb = gb.get(key).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "dataset `{}` ({}) missing from results of {model_b}",
                key.0,
                key.1.name()
            ))
        })?;
        let folds_a: Vec<usize> = va.iter().map(|x| x.0).collect();
        let folds_b: Vec<usize> = vb.iter().map(|x| x.0).collect();
        if folds_a != folds_b {
            return Err(Error::InvalidArgument(format!(
                "fold mismatch on `{}`: {folds_a:?} vs {folds_b:?}",
                key.0
            )));
        }
        let xa: Vec<f64> = va.iter().map(|x| x.1).collect();
        let xb: Vec<f64> = vb.iter().map(|x| x.1).collect();
        let test = if paired {
            paired_t_test(&xa, &xb)?
        } else {
            welch_t_test(&xa, &xb)?
        };
        let (mean_a, std_a) = mean_std(&xa);
        let (mean_b, std_b) = mean_std(&xb);
        let a_better = match key.1.direction() {
            Direction::LowerIsBetter => mean_a < mean_b,
            Direction::HigherIsBetter => mean_a > mean_b,
        };
        let winner = if mean_a == mean_b {
            "tie".to_string()
        } else if a_better {
            model_a.clone()
        } else {
            model_b.clone()
        };
        rows.push(ComparisonRow {
            dataset: key.0.clone(),
            metric: key.1,
            p: test.p,
            adjusted_p: 0.0,
            reject: Vec::new(),
            winner,
            mean_a,
            std_a,
            mean_b,
            std_b,
        });
    }
    let p: Vec<f64> = rows.iter().map(|r| r.p).collect();
    for (row, adj) in rows.iter_mut().zip(bh_adjusted(&p)) {
        row.adjusted_p = adj;
        row.reject = q_levels.iter().map(|&q| adj <= q).collect();
    }
    Ok(ComparisonReport {
        model_a,
        model_b,
        paired,
        q_levels: q_levels.to_vec(),
        rows,
    })
}

impl ComparisonReport {
    /// Columns `dataset, p, bh_reject_<q>..., winner`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    pub fn write_csv_to(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["dataset".to_string(), "p".to_string()];
        header.extend(self.q_levels.iter().map(|q| format!("bh_reject_{q:.2}")));
        header.push("winner".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.dataset.clone(), r.p.to_string()];
            rec.extend(r.reject.iter().map(|b| b.to_string()));
            rec.push(r.winner.clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
