//! Run configuration: a flat JSON file merged with command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mambular::data::Task;
use mambular::model::{Architecture, Head, ModelConfig, Pooling};
use mambular::train::TrainConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// Convolution width: a number, or `J` for the feature count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSpec {
    Width(usize),
    SequenceLength,
}

impl FromStr for KernelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("j") {
            return Ok(KernelSpec::SequenceLength);
        }
        s.parse()
            .map(KernelSpec::Width)
            .map_err(|_| format!("kernel must be a positive integer or `J`, got `{s}`"))
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Width(k) => write!(f, "{k}"),
            KernelSpec::SequenceLength => f.write_str("J"),
        }
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KernelSpec::Width(k) => s.serialize_u64(*k as u64),
            KernelSpec::SequenceLength => s.serialize_str("J"),
        }
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Width(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Width(k) => Ok(KernelSpec::Width(k)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Everything a run needs. Every key is optional in the file; missing keys
/// take the defaults below and command-line flags override file values.
/// Relative paths in a config file are resolved against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Dataset label in result files; defaults to the data file stem.
    pub dataset: Option<String>,
    pub seed: u64,
    pub folds: usize,
    pub val_fraction: f64,

    pub d: usize,
    pub layers: usize,
    pub expand: usize,
    pub kernel: KernelSpec,
    pub state: usize,
    pub dt_rank: Option<usize>,
    pub pooling: Pooling,
    pub bidirectional: bool,
    pub interaction: bool,
    pub arch: Architecture,
    /// Must agree with the schema task when given.
    pub head: Option<Head>,
    pub max_bins: Option<usize>,
    pub min_leaf: usize,
    pub dropout: f64,
    pub heads: usize,
    pub ff_dim: usize,
    pub attention_dropout: f64,
    pub ff_dropout: f64,

    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_factor: f64,
    pub lr_patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            data: None,
            schema: None,
            out: None,
            dataset: None,
            seed: 0,
            folds: 5,
            val_fraction: 0.2,
            d: m.d,
            layers: m.layers,
            expand: m.expand,
            kernel: m.kernel.map_or(KernelSpec::SequenceLength, KernelSpec::Width),
            state: m.state,
            dt_rank: m.dt_rank,
            pooling: m.pooling,
            bidirectional: m.bidirectional,
            interaction: m.interaction,
            arch: m.architecture,
            head: None,
            max_bins: m.max_bins,
            min_leaf: m.min_leaf,
            dropout: m.dropout,
            heads: m.heads,
            ff_dim: m.ff_dim,
            attention_dropout: m.attention_dropout,
            ff_dropout: m.ff_dropout,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            lr_factor: t.lr_factor,
            lr_patience: t.lr_patience,
        }
    }
}

fn head_for(task: Task) -> Head {
    match task {
        Task::Regression => Head::Regression,
        Task::Binary => Head::Binary,
        Task::Lss => Head::LssNormal,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.schema, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Model hyperparameters for a dataset with the given task.
    pub fn model_config(&self, task: Task) -> Result<ModelConfig, CliError> {
        let head = head_for(task);
        if let Some(h) = self.head {
            if h != head {
                return Err(CliError::Usage(format!(
                    "head {h:?} does not fit a {task:?} target (expected {head:?})"
                )));
            }
        }
        let cfg = ModelConfig {
            d: self.d,
            layers: self.layers,
            expand: self.expand,
            kernel: match self.kernel {
                KernelSpec::Width(k) => Some(k),
                KernelSpec::SequenceLength => None,
            },
            state: self.state,
            dt_rank: self.dt_rank,
            pooling: self.pooling,
            bidirectional: self.bidirectional,
            interaction: self.interaction,
            architecture: self.arch,
            head,
            max_bins: self.max_bins,
            min_leaf: self.min_leaf,
            dropout: self.dropout,
            heads: self.heads,
            ff_dim: self.ff_dim,
            attention_dropout: self.attention_dropout,
            ff_dropout: self.ff_dropout,
            permutation: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Optimizer settings; the batch-shuffle seed is set per fold.
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            lr_factor: self.lr_factor,
            lr_patience: self.lr_patience,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn check_folds(&self) -> Result<(), CliError> {
        if self.folds < 2 {
            return Err(CliError::Usage(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("an output directory is required (--out)".into()))
    }
}
