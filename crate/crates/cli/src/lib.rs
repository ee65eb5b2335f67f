//! Command-line harness around the `mambular` library: training,
//! cross-validation, feature-ordering ablations, fold-wise model comparison
//! and the synthetic ordering dataset.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mambular::model::{Architecture, Head, Pooling};

pub use config::{KernelSpec, RunConfig};

/// Failure of a command, with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or schema: exit code 2.
    Usage(String),
    /// Anything that fails while running: exit code 1, unless the library
    /// reports a configuration or schema problem.
    Run(mambular::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(mambular::Error::Config(_) | mambular::Error::Schema(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mambular::Error> for CliError {
    fn from(e: mambular::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mambular", version, about = "Selective state-space models for tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one split and write checkpoint.bin, history.csv and metrics.json.
    Train(RunArgs),
    /// K-fold cross-validation against the linear baseline; writes folds.csv
    /// and aggregate.json.
    Cv(RunArgs),
    /// Cross-validate the default, flipped, block-swapped and shuffled
    /// feature orderings.
    AblateOrdering(AblateArgs),
    /// Fold-wise t-tests with Benjamini-Hochberg decisions between two models.
    Compare(CompareArgs),
    /// Write the synthetic ordering dataset, its schema and ground truth.
    Synth(SynthArgs),
}

/// Flags shared by the training commands. Each one overrides the
/// corresponding key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON schema naming feature kinds, the target and the task.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset label used in result files.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Convolution width, or `J` for the number of features.
    #[arg(long)]
    pub kernel: Option<KernelSpec>,
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub bidirectional: bool,
    #[arg(long)]
    pub interaction: bool,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Architecture>,
    /// Output head; must match the schema task.
    #[arg(long, value_parser = parse_head)]
    pub head: Option<Head>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub state: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    s.parse().map_err(|e: mambular::Error| e.to_string())
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: mambular::Error| e.to_string())
}

fn parse_head(s: &str) -> Result<Head, String> {
    s.parse().map_err(|e: mambular::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingMode {
    /// Reorder the dataset columns before preprocessing.
    BeforeEmbedding,
    /// Permute the embedded tokens inside the model.
    AfterEmbedding,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "before-embedding")]
    pub mode: OrderingMode,
    /// Number of random permutations on top of the fixed orderings.
    #[arg(long, default_value_t = 0)]
    pub shuffles: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Result directory (containing folds.csv) of the first model; repeatable.
    #[arg(long = "a", required = true)]
    pub a: Vec<PathBuf>,
    /// Result directory of the second model; repeatable.
    #[arg(long = "b", required = true)]
    pub b: Vec<PathBuf>,
    /// Model label to take from the first directories; needed when they hold
    /// more than one model.
    #[arg(long)]
    pub model_a: Option<String>,
    #[arg(long)]
    pub model_b: Option<String>,
    /// Benjamini-Hochberg levels.
    #[arg(long = "q", default_values_t = [0.05, 0.10])]
    pub q: Vec<f64>,
    /// Welch's test instead of the paired test.
    #[arg(long)]
    pub unpaired: bool,
    /// Directory for comparison.json and comparison.csv; the CSV is always
    /// printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Cv(a) => commands::cv(&a),
        Command::AblateOrdering(a) => commands::ablate_ordering(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}
