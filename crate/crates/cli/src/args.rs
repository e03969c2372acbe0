use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ct-factor", version, about = "Factor structure learning by correlation thresholding")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CT_FACTOR_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep thresholds, fit candidate structures and select one.
    Fit(FitArgs),
    /// Generate a model and a data set from it.
    Simulate(SimulateArgs),
    /// Repeated simulate-fit-score runs with aggregate statistics.
    Bench(BenchArgs),
    /// Independent maximal cliques of one thresholded correlation graph.
    Cliques(CliquesArgs),
    /// Identifiability and recoverability diagnostics for a model.
    Check(CheckArgs),
    /// Compare an estimated structure with the true one.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Data matrix as CSV (rows are observations).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Correlation matrix as JSON: {"n": <int>, "corr": [[...], ...]}.
    #[arg(long)]
    pub corr: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectMode {
    Bic,
    MinHd,
    None,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Explicit thresholds, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_thresholds")]
    pub thresholds: Option<Vec<f64>>,

    /// Number of equidistant thresholds on [0, 1].
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u32).range(1..))]
    pub n_thresholds: u32,

    #[arg(long, value_enum, default_value_t = SelectMode::Bic)]
    pub select: SelectMode,

    /// True structure JSON; required by `--select min-hd`, otherwise used
    /// for scoring the selection.
    #[arg(long)]
    pub truth: Option<PathBuf>,

    /// Held-out log-likelihood of the selected structure with this many folds
    /// (needs `--data` and a selection).
    #[arg(long)]
    pub cv_folds: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,

    #[arg(long, default_value_t = 3)]
    pub restarts: usize,

    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,

    /// Output file (stdout when omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 5)]
    pub children: usize,
    #[arg(long, default_value_t = 0.6)]
    pub lambda_lo: f64,
    #[arg(long, default_value_t = 0.8)]
    pub lambda_hi: f64,
    #[arg(long, default_value_t = 0.25)]
    pub phi_scale: f64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of factors that lose their unique children (forces Φ = I).
    #[arg(long, default_value_t = 0.0)]
    pub ucc_violation: f64,
    /// High-dimensional preset `highdim-<n>`; overrides n, d and children.
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory receiving model.json, truth.json and data.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Violation {
    /// Strongly correlated factors.
    Thresh,
    /// Factors without unique children, Φ = I.
    Ucc,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub kind: BenchKind,

    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Factor correlation scales (low-dimensional bench).
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.75])]
    pub phi_scale: Vec<f64>,

    /// Sample sizes of the high-dimensional presets.
    #[arg(long, value_delimiter = ',', default_values_t = [250])]
    pub preset: Vec<usize>,

    /// Assumption violated in the high-dimensional bench.
    #[arg(long, value_enum, default_value_t = Violation::Both)]
    pub condition: Violation,

    /// Selection rule; defaults to bic (low) or min-hd (high).
    #[arg(long, value_enum)]
    pub mode: Option<SelectMode>,

    /// Directory receiving aggregate.json and replicates.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CliquesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub tau: f64,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Model JSON with lambda, phi and omega.
    pub model: PathBuf,
    /// Sample sizes at which to evaluate the edge-recovery bound.
    #[arg(long, value_delimiter = ',', default_values_t = [100u64, 300, 1000, 3000, 10000])]
    pub n_grid: Vec<u64>,
    /// Constant of the edge-recovery bound.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimated structure JSON.
    pub estimate: PathBuf,
    /// True structure JSON.
    pub truth: PathBuf,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
