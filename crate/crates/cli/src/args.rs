use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::OutcomeModel;
use crate::policy_spec::PolicySpec;

#[derive(Debug, Parser)]
#[command(name = "balpol", version, about = "Balanced off-policy evaluation and learning from logged bandit data")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; a random one is chosen and printed when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the main output (stdout when absent).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Treat outcomes as rewards: negate them on load.
    #[arg(long, global = true)]
    pub maximize: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the value of a policy from logged data.
    Evaluate(EvaluateArgs),
    /// Learn a logit policy from logged data.
    Learn(LearnArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Run a replication study.
    Benchmark(BenchmarkArgs),
    /// Pick kernel hyperparameters by marginal likelihood.
    Tune(TuneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMethodArg {
    Balanced,
    BalancedDr,
    Ipw,
    Nipw,
    Cipw,
    Ncipw,
    Dr,
    Direct,
}

/// `logit`, `gaussian` or `known:<csv>`.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityArg {
    Logit,
    Gaussian,
    Known(PathBuf),
}

impl std::str::FromStr for PropensityArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logit" => Ok(PropensityArg::Logit),
            "gaussian" => Ok(PropensityArg::Gaussian),
            _ => match s.strip_prefix("known:") {
                Some(p) if !p.is_empty() => Ok(PropensityArg::Known(PathBuf::from(p))),
                _ => Err(format!("expected logit, gaussian or known:<csv>, got '{s}'")),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `uniform`, `deterministic:<arm>`, a coefficient `.json` or an
    /// assignment `.csv`.
    #[arg(long)]
    pub policy: PolicySpec,
    #[arg(long, value_enum)]
    pub method: EvalMethodArg,
    /// Clip level for cipw and ncipw.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub propensity: Option<PropensityArg>,
    #[arg(long, value_enum)]
    pub outcome_model: Option<OutcomeModel>,
    /// Fit the outcome model once on the full sample.
    #[arg(long)]
    pub no_crossfit: bool,
    /// Number of arms, when larger than the largest logged treatment.
    #[arg(long)]
    pub arms: Option<usize>,
    /// Also write the weights to this CSV.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnMethodArg {
    Balanced,
    BalancedDr,
    IpwLogit,
    DrLogit,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: LearnMethodArg,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Weight on the balance objective in the learning criterion.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub propensity: Option<PropensityArg>,
    #[arg(long)]
    pub no_crossfit: bool,
    #[arg(long)]
    pub arms: Option<usize>,
    /// Iteration trace CSV of the selected restart.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Environment JSON written by `simulate --truth`; adds the regret.
    #[arg(long)]
    pub eval_against: Option<PathBuf>,
    /// Monte Carlo size of the regret estimate.
    #[arg(long, default_value_t = 100_000)]
    pub regret_samples: usize,
    /// Grid CSV of the learned policy's chosen arm (two covariates only).
    #[arg(long)]
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExampleArg {
    /// Gaussian-mixture covariates with radial outcome bumps.
    #[value(name = "1")]
    Mixture,
    /// Same covariates, outcomes a finite kernel expansion.
    Expansion,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "1")]
    pub example: ExampleArg,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 5)]
    pub arms: usize,
    /// Also write the generating environment as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Evaluation,
    Learning,
    Rate,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub mode: BenchMode,
    /// Replications (evaluation, rate).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Fresh datasets (learning).
    #[arg(long)]
    pub draws: Option<usize>,
    /// Sample sizes (rate), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Summary table CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub bandwidths: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    #[arg(long)]
    pub arms: Option<usize>,
    /// Every evaluated grid point as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}
