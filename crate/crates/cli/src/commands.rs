use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mambular::data::{
    generate_synthetic_ordering_dataset, load_csv, reorder_features, ColumnKind, SchemaFile,
    TabularDataset,
};
use mambular::eval::{aggregate, compare as compare_results, paired_t_test, FoldResult, Metric};
use mambular::rng;
use mambular::train::{save_checkpoint, write_history};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{fold_plan, Experiment, MAMBULAR};
use crate::{AblateArgs, CliError, CompareArgs, OrderingMode, RunArgs, SynthArgs};

/// File-level configuration with the flags applied on top.
pub fn resolve(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),+) => {$(
            if let Some(v) = &args.$field {
                cfg.$field = v.clone().into();
            }
        )+};
    }
    set!(data, schema, out, dataset);
    set!(seed, kernel, pooling, arch, folds, d, layers, state, batch_size, max_epochs, lr);
    if args.head.is_some() {
        cfg.head = args.head;
    }
    cfg.bidirectional |= args.bidirectional;
    cfg.interaction |= args.interaction;
    Ok(cfg)
}

/// Dataset and its label.
pub fn load_dataset(cfg: &RunConfig) -> Result<(TabularDataset, String), CliError> {
    let data = cfg
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage("a data file is required (--data)".into()))?;
    let schema_path = cfg
        .schema
        .as_deref()
        .ok_or_else(|| CliError::Usage("a schema file is required (--schema)".into()))?;
    let schema = SchemaFile::load(schema_path)
        .map_err(|e| CliError::Usage(format!("schema {}: {e}", schema_path.display())))?;
    let dataset = load_csv(data, &schema)?;
    let label = cfg.dataset.clone().unwrap_or_else(|| {
        data.file_stem()
            .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
    });
    log::info!(
        "{label}: {} rows, {} features, {:?} task",
        dataset.n_rows(),
        dataset.n_features(),
        dataset.task
    );
    Ok((dataset, label))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn prepare<'a>(
    cfg: &RunConfig,
    data: &'a TabularDataset,
    dataset: &'a str,
) -> Result<Experiment<'a>, CliError> {
    cfg.check_folds()?;
    Ok(Experiment {
        data,
        dataset,
        model: cfg.model_config(data.task)?,
        train: cfg.train_config()?,
        plan: fold_plan(data.n_rows(), cfg.folds, cfg.seed, cfg.val_fraction)?,
        seed: cfg.seed,
    })
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out)?;
    Ok(out)
}

/// Train on the first fold's train split, early-stopping on its validation
/// split, and score its test split.
pub fn train(args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let (data, label) = load_dataset(&cfg)?;
    let exp = prepare(&cfg, &data, &label)?;
    let out = output_dir(&cfg)?;
    let outcome = exp.run_fold(0, MAMBULAR, true)?;
    save_checkpoint(&out.join("checkpoint.bin"), &outcome.model, &outcome.preprocessor)?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    write_json(&out.join("metrics.json"), &outcome.results)?;
    write_json(&out.join("config.json"), &cfg)?;
    log::info!(
        "{} parameters; artifacts in {}",
        outcome.model.num_parameters(),
        out.display()
    );
    Ok(())
}

pub fn cv(args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let (data, label) = load_dataset(&cfg)?;
    let exp = prepare(&cfg, &data, &label)?;
    let out = output_dir(&cfg)?;
    let mut results = Vec::new();
    for fold in 0..cfg.folds {
        let outcome = exp.run_fold(fold, MAMBULAR, true)?;
        write_history(&out.join(format!("history_fold{fold}.csv")), &outcome.history)?;
        results.extend(outcome.results);
    }
    FoldResult::write_csv(&out.join("folds.csv"), &results)?;
    let agg = aggregate(&results);
    for a in &agg {
        log::info!("{} {} {}: {:.4} ± {:.4}", a.dataset, a.model, a.metric.name(), a.mean, a.std);
    }
    write_json(&out.join("aggregate.json"), &agg)?;
    write_json(&out.join("config.json"), &cfg)?;
    Ok(())
}

/// A feature order: position `i` of the sequence holds feature `permutation[i]`.
#[derive(Clone, Debug, Serialize)]
pub struct OrderingResult {
    pub name: String,
    pub permutation: Vec<usize>,
    pub features: Vec<String>,
    pub metric: Metric,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Paired t-test against the default order; absent for the default.
    pub p_vs_default: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderingReport {
    pub dataset: String,
    pub mode: OrderingMode,
    pub seed: u64,
    pub kernel: String,
    pub orderings: Vec<OrderingResult>,
}

/// Default, flipped and block-swapped orders, then `shuffles` random ones.
pub fn orderings(data: &TabularDataset, shuffles: usize, seed: u64) -> Vec<(String, Vec<usize>)> {
    let n = data.n_features();
    let ids: Vec<usize> = (0..n).collect();
    let of_kind = |k: ColumnKind| -> Vec<usize> {
        ids.iter().copied().filter(|&i| data.features[i].kind() == k).collect()
    };
    let (num, cat) = (of_kind(ColumnKind::Numeric), of_kind(ColumnKind::Categorical));
    // Put first the block that does not lead in the data.
    let cat_first = data.features.first().map_or(true, |f| f.kind() == ColumnKind::Numeric);
    let (name, swapped) = if cat_first {
        ("cat|num", [cat, num].concat())
    } else {
        ("num|cat", [num, cat].concat())
    };
    let mut out = vec![
        ("default".to_string(), ids.clone()),
        ("flipped".to_string(), ids.iter().rev().copied().collect()),
        (name.to_string(), swapped),
    ];
    for i in 1..=shuffles {
        let mut p = ids.clone();
        p.shuffle(&mut rng::stream(seed, &format!("ordering-{i}")));
        out.push((format!("shuffle-{i}"), p));
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

pub fn ablate_ordering(args: &AblateArgs) -> Result<(), CliError> {
    let cfg = resolve(&args.run)?;
    let (data, label) = load_dataset(&cfg)?;
    let out = output_dir(&cfg)?;
    let mut all = Vec::new();
    let mut report = OrderingReport {
        dataset: label.clone(),
        mode: args.mode,
        seed: cfg.seed,
        kernel: cfg.kernel.to_string(),
        orderings: Vec::new(),
    };
    for (name, perm) in orderings(&data, args.shuffles, cfg.seed) {
        log::info!("ordering {name}: {perm:?}");
        let reordered;
        let exp = match args.mode {
            OrderingMode::BeforeEmbedding => {
                reordered = reorder_features(&data, &perm)?;
                prepare(&cfg, &reordered, &label)?
            }
            OrderingMode::AfterEmbedding => {
                let mut exp = prepare(&cfg, &data, &label)?;
                exp.model.permutation = Some(perm.clone());
                exp
            }
        };
        let mut rows = Vec::new();
        for fold in 0..cfg.folds {
            rows.extend(exp.run_fold(fold, &name, false)?.results);
        }
        let metric = rows[0].metric;
        let values: Vec<f64> = rows.iter().filter(|r| r.metric == metric).map(|r| r.value).collect();
        let (mean, std) = mean_std(&values);
        let p_vs_default = match report.orderings.first() {
            Some(base) => Some(paired_t_test(&values, &base.values)?.p),
            None => None,
        };
        report.orderings.push(OrderingResult {
            features: perm.iter().map(|&i| data.features[i].name.clone()).collect(),
            name,
            permutation: perm,
            metric,
            values,
            mean,
            std,
            p_vs_default,
        });
        all.extend(rows);
    }
    FoldResult::write_csv(&out.join("folds.csv"), &all)?;
    write_json(&out.join("ordering.json"), &report)?;
    let mut csv = fs::File::create(out.join("ordering.csv"))?;
    writeln!(csv, "ordering,permutation,metric,mean,std,p_vs_default")?;
    for o in &report.orderings {
        let perm: Vec<String> = o.permutation.iter().map(ToString::to_string).collect();
        let p = o.p_vs_default.map_or(String::new(), |p| p.to_string());
        writeln!(csv, "{},{},{},{},{},{p}", o.name, perm.join(" "), o.metric.name(), o.mean, o.std)?;
        log::info!("{}: {} {:.4} ± {:.4} p={p}", o.name, o.metric.name(), o.mean, o.std);
    }
    write_json(&out.join("config.json"), &cfg)?;
    Ok(())
}

/// Rows of `model` from the folds.csv files of `dirs`.
pub fn collect_results(dirs: &[PathBuf], model: Option<&str>, side: &str) -> Result<Vec<FoldResult>, CliError> {
    let mut rows = Vec::new();
    for dir in dirs {
        let path = dir.join("folds.csv");
        if !path.is_file() {
            return Err(CliError::Usage(format!("{} does not exist", path.display())));
        }
        rows.extend(FoldResult::read_csv(&path)?);
    }
    let models: BTreeSet<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    let chosen = match model {
        Some(m) if models.contains(m) => m.to_string(),
        Some(m) => {
            return Err(CliError::Usage(format!(
                "model `{m}` not found for --{side}; available: {models:?}"
            )))
        }
        None if models.len() == 1 => models.iter().next().unwrap().to_string(),
        None => {
            return Err(CliError::Usage(format!(
                "--{side} holds several models {models:?}; pick one with --model-{side}"
            )))
        }
    };
    Ok(rows.into_iter().filter(|r| r.model == chosen).collect())
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    if args.q.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(CliError::Usage(format!("q levels must lie in (0, 1): {:?}", args.q)));
    }
    let a = collect_results(&args.a, args.model_a.as_deref(), "a")?;
    let b = collect_results(&args.b, args.model_b.as_deref(), "b")?;
    let report = compare_results(&a, &b, &args.q, !args.unpaired)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("comparison.json"), &report)?;
        report.write_csv(&out.join("comparison.csv"))?;
    }
    report.write_csv_to(std::io::stdout().lock())?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let (data, truth) = generate_synthetic_ordering_dataset(args.seed);
    fs::create_dir_all(&args.out)?;
    data.write_csv(&args.out.join("synthetic.csv"))?;
    write_json(&args.out.join("synthetic.schema.json"), &data.schema_file())?;
    write_json(&args.out.join("ground_truth.json"), &truth)?;
    log::info!("{} rows written to {}", data.n_rows(), args.out.display());
    Ok(())
}
