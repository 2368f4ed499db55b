//! Command-line surface. Flag names follow the model vocabulary: rank (bond
//! dimension), input leg (symbols per variable) and number of cores.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ptn_core::{GrowthStatistic, OptimizerKind, PositivityMode};
use serde::Serialize;

fn parse_mode(s: &str) -> Result<PositivityMode, String> {
    s.parse().map_err(|e: ptn_core::PtnError| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: ptn_core::PtnError| e.to_string())
}

fn parse_evidence(s: &str) -> Result<(usize, usize), String> {
    let (p, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected POSITION=VALUE, got '{s}'"))?;
    let p = p
        .trim()
        .parse()
        .map_err(|_| format!("bad position in '{s}'"))?;
    let v = v
        .trim()
        .parse()
        .map_err(|_| format!("bad value in '{s}'"))?;
    Ok((p, v))
}

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "ptn",
    version,
    about = "Train, evaluate and sample probabilistic matrix product states"
)]
pub struct Cli {
    /// Maximum worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit a model; writes a checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Negative log-likelihood of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Draw exact samples from a checkpoint.
    Sample(SampleArgs),
    /// Time one full-parameter update over a grid of shapes.
    Bench(BenchArgs),
    /// Instability diagnostics: growth curves or overflow onset.
    Diag(DiagArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Sample(_) => "sample",
            Command::Bench(_) => "bench",
            Command::Diag(_) => "diag",
        }
    }

    pub fn output(&self) -> &OutputArgs {
        match self {
            Command::Train(a) => &a.output,
            Command::Eval(a) => &a.output,
            Command::Sample(a) => &a.output,
            Command::Bench(a) => &a.output,
            Command::Diag(a) => &a.output,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct OutputArgs {
    /// Run directory (default: `$PTN_RUNS_DIR/<subcommand>-<timestamp>`,
    /// with `runs` as the root when the variable is unset).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reuse a non-empty run directory, overwriting its files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Comma- or whitespace-separated integer symbols, one row per line.
    Csv,
    /// IDX image file, binarized at `--threshold`.
    Idx,
}

#[derive(Args, Debug, Serialize)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "csv")]
    pub format: DataFormat,
    /// Pixel threshold for IDX images (value ≥ threshold → 1).
    #[arg(long, default_value_t = ptn_core::data::DEFAULT_THRESHOLD)]
    pub threshold: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    /// Scaled-contraction gradient descent on all cores.
    Lsf,
    /// Raw-product gradient descent (numerically unstable baseline).
    Naive,
    /// Two-site DMRG sweeps (Born machines only).
    Dmrg,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Training data.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation data (selects the saved checkpoint).
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Test data, evaluated once on the saved checkpoint.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub data_format: DataArgs,

    /// Bond dimension R.
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    /// Symbols per variable D (default: largest symbol in the data + 1, at least 2).
    #[arg(long)]
    pub input_leg: Option<usize>,
    /// Number of cores N; must match the data's column count when given.
    #[arg(long)]
    pub cores: Option<usize>,
    #[arg(long, default_value = "sigma_exp", value_parser = parse_mode)]
    pub mode: PositivityMode,
    #[arg(long, value_enum, default_value = "lsf")]
    pub method: TrainMethod,

    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "sgd", value_parser = parse_optimizer)]
    pub optimizer: OptimizerKind,
    /// Std of the Gaussian core initialization (default 1/√R).
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Clip the global gradient L2 norm to this value.
    #[arg(long)]
    pub grad_clip: Option<f64>,

    /// DMRG: largest kept bond dimension (default: --rank).
    #[arg(long)]
    pub max_rank: Option<usize>,
    /// DMRG: discard singular values below cutoff × largest.
    #[arg(long, default_value_t = 1e-10)]
    pub cutoff: f64,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_format: DataArgs,
    /// Split name recorded in the metrics row.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrder {
    Forward,
    Backward,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of samples K.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "forward")]
    pub order: SampleOrder,
    /// Fix a variable, `POSITION=VALUE` (0-based); repeatable. The remaining
    /// variables are drawn from the conditional distribution.
    #[arg(long, value_parser = parse_evidence)]
    pub evidence: Vec<(usize, usize)>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethodArg {
    Lsf,
    Dmrg,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "lsf,dmrg")]
    pub method: Vec<BenchMethodArg>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub cores: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub rank: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub input_leg: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Positivity mode of the scaled-gradient runs (DMRG always uses born).
    #[arg(long, default_value = "born", value_parser = parse_mode)]
    pub mode: PositivityMode,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagKind {
    /// Monte-Carlo growth of log Z / log Ψ² with chain length.
    Growth,
    /// Iterations survived by naive and scaled training.
    Onset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticArg {
    MeanLogZ,
    MeanLogPsiSq,
    LogMeanPsiSq,
}

impl From<StatisticArg> for GrowthStatistic {
    fn from(s: StatisticArg) -> Self {
        match s {
            StatisticArg::MeanLogZ => GrowthStatistic::MeanLogZ,
            StatisticArg::MeanLogPsiSq => GrowthStatistic::MeanLogPsiSq,
            StatisticArg::LogMeanPsiSq => GrowthStatistic::LogMeanPsiSq,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsetMethod {
    Lsf,
    Naive,
}

#[derive(Args, Debug, Serialize)]
pub struct DiagArgs {
    #[arg(long, value_enum)]
    pub kind: DiagKind,
    #[arg(long, default_value = "sigma_exp", value_parser = parse_mode)]
    pub mode: PositivityMode,
    #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
    pub cores: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 2)]
    pub input_leg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Growth: models per N (at least 100).
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Growth: statistic (default mean_log_z for σ-modes, mean_log_psi_sq for born).
    #[arg(long, value_enum)]
    pub statistic: Option<StatisticArg>,

    /// Onset: iteration budget per run.
    #[arg(long, default_value_t = ptn_core::diagnostics::DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "naive,lsf")]
    pub method: Vec<OnsetMethod>,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Onset: initialization std (default 1, unit variance).
    #[arg(long, default_value_t = 1.0)]
    pub init_std: f64,

    #[command(flatten)]
    pub output: OutputArgs,
}
