//! Fold-level training and scoring shared by the commands.

use std::time::Instant;

use mambular::data::{kfold_split, FoldPlan, TabularDataset, Task};
use mambular::encoding::{EncodedData, PleConfig, Preprocessor, TreeCriterion};
use mambular::eval::{auc, mean_crps, mean_normal_nll, mse, FoldResult, Metric};
use mambular::model::{InputLayout, LinearBaseline, Mambular, ModelConfig, Predictions};
use mambular::rng::derive_seed;
use mambular::train::{train, EpochRecord, TrainConfig};
use mambular::Result;

/// Model label of the neural model in result files.
pub const MAMBULAR: &str = "mambular";
/// Model label of the linear or logistic baseline.
pub const LINEAR: &str = "linear";

/// One prepared cross-validation experiment.
pub struct Experiment<'a> {
    pub data: &'a TabularDataset,
    pub dataset: &'a str,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub plan: FoldPlan,
    pub seed: u64,
}

pub struct FoldOutcome {
    pub results: Vec<FoldResult>,
    pub history: Vec<EpochRecord>,
    pub model: Mambular,
    pub preprocessor: Preprocessor,
}

/// Split seed shared by every run with the same `seed`, so that different
/// models and orderings see identical folds.
pub fn fold_plan(n: usize, k: usize, seed: u64, val_fraction: f64) -> Result<FoldPlan> {
    kfold_split(n, k, derive_seed(seed, "split"), val_fraction)
}

fn criterion(task: Task) -> TreeCriterion {
    match task {
        Task::Binary => TreeCriterion::Gini,
        _ => TreeCriterion::SquaredError,
    }
}

/// Test-split metrics for a task.
pub fn score(predictions: &Predictions, target: &[f64]) -> Result<Vec<(Metric, f64)>> {
    Ok(match predictions {
        Predictions::Regression(p) => vec![(Metric::Mse, mse(p, target)?)],
        Predictions::Binary(p) => vec![(Metric::Auc, auc(p, target)?)],
        Predictions::Normal { mu, sigma } => vec![
            (Metric::Crps, mean_crps(mu, sigma, target)?),
            (Metric::Nll, mean_normal_nll(mu, sigma, target)?),
        ],
    })
}

impl Experiment<'_> {
    /// Train and score fold `index` under `label`. Regression and binary
    /// tasks also score the linear baseline when `baseline` is set.
    pub fn run_fold(&self, index: usize, label: &str, baseline: bool) -> Result<FoldOutcome> {
        let started = Instant::now();
        let fold = self.plan.fold(index)?;
        let train_set = self.data.subset(&fold.train);
        let test_set = self.data.subset(&fold.test);
        let ple = PleConfig {
            max_bins: self.model.max_bins(),
            min_leaf: self.model.min_leaf,
            criterion: criterion(self.data.task),
        };
        let pre = Preprocessor::fit(&train_set, &ple)?;
        let encode = |rows: &[usize]| -> Result<EncodedData> { pre.transform(&self.data.subset(rows)) };
        let (train_enc, val_enc, test_enc) = (encode(&fold.train)?, encode(&fold.val)?, encode(&fold.test)?);

        let mut model = Mambular::new(
            self.model.clone(),
            InputLayout::of(&pre),
            derive_seed(self.seed, &format!("init-{index}")),
        )?;
        let train_cfg = TrainConfig {
            seed: derive_seed(self.seed, &format!("batches-{index}")),
            ..self.train.clone()
        };
        let report = train(&mut model, &train_enc, &val_enc, &train_cfg)?;

        let row = |model: &str, metric: Metric, value: f64| FoldResult {
            model: model.into(),
            dataset: self.dataset.into(),
            fold: index,
            metric,
            value,
        };
        // Scores are on the standardized target scale of the training split.
        let mut results: Vec<FoldResult> = score(&model.predict(&test_enc)?, &test_enc.target)?
            .into_iter()
            .map(|(m, v)| row(label, m, v))
            .collect();
        if baseline && self.data.task != Task::Lss {
            let lin = LinearBaseline::fit(&train_set, &pre)?;
            let p = lin.predict(&test_set)?;
            let value = match self.data.task {
                Task::Binary => (Metric::Auc, auc(&p, &test_enc.target)?),
                _ => (Metric::Mse, mse(&p, &test_enc.target)?),
            };
            results.push(row(LINEAR, value.0, value.1));
        }
        log::info!(
            "{} fold {index}: {} epochs (best {}), {} in {:.1}s",
            self.dataset,
            report.history.len(),
            report.best_epoch,
            results
                .iter()
                .map(|r| format!("{} {} {:.4}", r.model, r.metric.name(), r.value))
                .collect::<Vec<_>>()
                .join(", "),
            started.elapsed().as_secs_f64()
        );
        Ok(FoldOutcome {
            results,
            history: report.history,
            model,
            preprocessor: pre,
        })
    }
}
