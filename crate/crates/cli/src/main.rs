//! `forkcast`: fork-rate fitting, evaluation, simulation and reporting.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forkcast_core::forkrate::MethodChoice;
use forkcast_core::{Error, FamilyKind, QuadratureConfig};

#[derive(Parser, Debug)]
#[command(name = "forkcast", version, about = "Soft-fork rates for proof-of-work miners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a hash-rate model to per-miner block counts and print it as JSON.
    Fit(FitArgs),
    /// Evaluate the fork rate C(Δ₀) on a list of delays (CSV).
    Forkrate(ForkrateArgs),
    /// Run the Monte Carlo simulator (JSON).
    Simulate(SimulateArgs),
    /// Invert the first-order fork-rate formula (JSON).
    Implied(ImpliedArgs),
    /// Percentile band on a fitted fork-rate curve (CSV).
    Band(BandArgs),
    /// Period-wise report from block, stale, propagation and hash-rate files.
    Pipeline(PipelineArgs),
}

/// Families `fit` and `--blocks` models understand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitFamily {
    Exp,
    Lognormal,
    Tpl,
    SemiIid,
    SemiInid,
    /// Frequentist hash rates `bᵢΛ/B` (conditional formula).
    Empirical,
}

impl FitFamily {
    pub fn null_kind(self) -> Option<FamilyKind> {
        match self {
            FitFamily::Exp => Some(FamilyKind::Exponential),
            FitFamily::Lognormal => Some(FamilyKind::LogNormal),
            FitFamily::Tpl => Some(FamilyKind::TruncatedPowerLaw),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FitFamily::Exp => "exp",
            FitFamily::Lognormal => "lognormal",
            FitFamily::Tpl => "tpl",
            FitFamily::SemiIid => "semi_iid",
            FitFamily::SemiInid => "semi_inid",
            FitFamily::Empirical => "empirical",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum NullKindArg {
    Exp,
    Lognormal,
    Tpl,
}

impl From<NullKindArg> for FamilyKind {
    fn from(k: NullKindArg) -> Self {
        match k {
            NullKindArg::Exp => FamilyKind::Exponential,
            NullKindArg::Lognormal => FamilyKind::LogNormal,
            NullKindArg::Tpl => FamilyKind::TruncatedPowerLaw,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Auto,
    Quadrature,
    Taylor,
    Conditional,
}

impl From<MethodArg> for MethodChoice {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => MethodChoice::Auto,
            MethodArg::Quadrature => MethodChoice::Quadrature,
            MethodArg::Taylor => MethodChoice::Taylor,
            MethodArg::Conditional => MethodChoice::Conditional,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct QuadArgs {
    /// Relative tolerance of every integral.
    #[arg(long, default_value_t = 1e-9)]
    rel_tol: f64,
    /// Absolute tolerance of every integral.
    #[arg(long, default_value_t = 1e-12)]
    abs_tol: f64,
    /// Subdivision budget per integral.
    #[arg(long, default_value_t = 2000)]
    max_subdivisions: usize,
}

impl QuadArgs {
    fn config(&self) -> Result<QuadratureConfig, Error> {
        QuadratureConfig::new(self.rel_tol, self.abs_tol, self.max_subdivisions)
    }
}

/// Counts from a blocks file (every row counts as one block).
#[derive(Args, Debug, Clone)]
struct CountsArgs {
    /// blocks.csv with columns height,timestamp,bits,miner_id.
    #[arg(long)]
    blocks: PathBuf,
    /// Total hash rate Λ in blocks/s.
    #[arg(long = "lambda")]
    lambda: f64,
    /// Miners with zero blocks to add to the population.
    #[arg(long, default_value_t = 0)]
    zero_miners: usize,
}

/// A hash-rate model given directly or fitted from block counts.
#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Model as inline JSON or a path to a JSON file (as printed by `fit`).
    #[arg(long, conflicts_with_all = ["blocks", "lambda"], required_unless_present = "blocks")]
    model: Option<String>,
    /// blocks.csv to fit a model from.
    #[arg(long, requires = "lambda")]
    blocks: Option<PathBuf>,
    /// Total hash rate Λ in blocks/s (with --blocks).
    #[arg(long = "lambda")]
    lambda: Option<f64>,
    /// Family fitted to --blocks.
    #[arg(long, value_enum, default_value_t = FitFamily::Empirical)]
    family: FitFamily,
    /// Zero-block miners added before fitting (with --blocks).
    #[arg(long, default_value_t = 0)]
    zero_miners: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    counts: CountsArgs,
    #[arg(long, value_enum)]
    family: FitFamily,
}

#[derive(Args, Debug)]
struct ForkrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated propagation delays in seconds.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    delta0: Vec<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Propagation delay in seconds.
    #[arg(long, allow_negative_numbers = true)]
    delta0: f64,
    #[arg(long, default_value_t = 1_000_000)]
    rounds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, env = "FORKCAST_THREADS", default_value_t = 0)]
    threads: usize,
    /// Draw random hash rates once per run instead of every round.
    #[arg(long)]
    per_run: bool,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct ImpliedArgs {
    #[command(subcommand)]
    target: ImpliedTarget,
}

#[derive(Subcommand, Debug)]
enum ImpliedTarget {
    /// Delay C/(Λ(1−HHI)).
    Delta {
        #[arg(long, allow_negative_numbers = true)]
        forkrate: f64,
        #[arg(long = "lambda")]
        lambda: f64,
        #[arg(long, allow_negative_numbers = true)]
        hhi: f64,
    },
    /// Concentration 1 − C/(ΛΔ₀).
    Hhi {
        #[arg(long, allow_negative_numbers = true)]
        forkrate: f64,
        #[arg(long = "lambda")]
        lambda: f64,
        #[arg(long, allow_negative_numbers = true)]
        delta0: f64,
    },
}

#[derive(Args, Debug)]
struct BandArgs {
    #[command(flatten)]
    counts: CountsArgs,
    #[arg(long, value_enum)]
    family: NullKindArg,
    /// Comma-separated delays in seconds.
    #[arg(long, value_delimiter = ',', required = true)]
    delta0_grid: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Lower and upper percentile.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "5,95")]
    percentiles: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, env = "FORKCAST_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    quad: QuadArgs,
}

/// Model families evaluated per period; `semi` expands to both
/// semi-empirical variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PipelineFamily {
    Exp,
    Lognormal,
    Tpl,
    Semi,
    SemiIid,
    SemiInid,
    Empirical,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    stale: PathBuf,
    #[arg(long)]
    propagation: PathBuf,
    #[arg(long)]
    hashrate: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Flat CSV twin; defaults to the report path with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "exp,lognormal,tpl,semi,empirical")]
    families: Vec<PipelineFamily>,
    /// Blocks per period.
    #[arg(long, default_value_t = forkcast_core::ingest::DEFAULT_PERIOD_LEN)]
    period_len: usize,
    /// Factor applied to observed stale rates.
    #[arg(long, default_value_t = forkcast_core::ingest::DEFAULT_RESCALE)]
    rescale: f64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, env = "FORKCAST_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    quad: QuadArgs,
}

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input: exit 2.
    Input(String),
    /// Fitting or numerical failure: exit 3.
    Numeric(String),
    /// Anything else: exit 4.
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numeric(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_input_error() || matches!(e, Error::InvalidParameter(_) | Error::EmptyPeriod) {
            CliError::Input(msg)
        } else {
            CliError::Numeric(msg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Forkrate(a) => commands::forkrate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Implied(a) => commands::implied(a),
        Command::Band(a) => commands::band(a),
        Command::Pipeline(a) => report::pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("forkcast: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
