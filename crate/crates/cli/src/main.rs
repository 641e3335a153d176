//! `mogge`: simulate, fit, select, trace lasso paths and evaluate
//! Gaussian-gated mixture-of-experts models.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mogge_core::{CovarianceKind, InitStrategy, InterceptConvention, PathBlocks};

use config::parse_name;

#[derive(Debug, Parser)]
#[command(name = "mogge", version, about = "Gaussian-gated mixtures of experts with l1-penalized EM")]
pub struct Cli {
    /// Base seed for every random draw (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for replicate, start and grid parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample replicate datasets from a scenario.
    Simulate(SimulateArgs),
    /// Fit by EM, or by EM-Lasso when --lambda or --gamma is given.
    Fit(FitArgs),
    /// Choose K, lambda and gamma by modified BIC over a grid.
    Select(SelectArgs),
    /// Export warm-started lasso paths of the gating means and expert coefficients.
    LassoPath(PathArgs),
    /// Clustering and sparsity metrics of fitted parameters.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::LassoPath(_) => "lasso_path",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Use the built-in two-component, p = 8 scenario.
    #[arg(long)]
    pub paper_scenario: bool,
    /// Scenario JSON (as written by `simulate`).
    #[arg(long, conflicts_with = "paper_scenario")]
    pub scenario: Option<PathBuf>,
    /// Number of datasets (default 1).
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Override the scenario's sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// `zero` or `first-entry` (built-in scenario only).
    #[arg(long, value_parser = parse_name::<InterceptConvention>)]
    pub intercept_convention: Option<InterceptConvention>,
}

#[derive(Debug, Args, Default)]
pub struct EmArgs {
    /// EM iterations per start (default 1000).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative objective tolerance (default 1e-6).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Random starts (default 10).
    #[arg(long)]
    pub n_starts: Option<usize>,
    /// `kmeans-on-x` or `random-partition`.
    #[arg(long, value_parser = parse_name::<InitStrategy>)]
    pub init: Option<InitStrategy>,
}

#[derive(Debug, Args, Default)]
pub struct CaArgs {
    /// Coordinate-ascent sweeps per M-step (default 100).
    #[arg(long)]
    pub ca_max_iter: Option<usize>,
    /// Coordinate-ascent objective tolerance (default 1e-7).
    #[arg(long)]
    pub ca_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV; repeat for several replicates.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Number of components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Penalty on expert coefficients.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Penalty on gating means.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `full` or `diagonal` (EM only; EM-Lasso is always diagonal).
    #[arg(long, value_parser = parse_name::<CovarianceKind>)]
    pub gating_cov: Option<CovarianceKind>,
    #[command(flatten)]
    pub em: EmArgs,
    #[command(flatten)]
    pub ca: CaArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Dataset CSV; repeat for several replicates.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Candidate component counts (default 2).
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Candidate lambdas (default 0,1,...,25).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    /// Candidate gammas (default 0,1,...,25).
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    /// Fit every grid point from cold starts only.
    #[arg(long)]
    pub no_warm_start: bool,
    #[command(flatten)]
    pub em: EmArgs,
    #[command(flatten)]
    pub ca: CaArgs,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Penalized blocks: `gate`, `expert` or `both` (default).
    #[arg(long, value_parser = parse_name::<PathBlocks>)]
    pub blocks: Option<PathBlocks>,
    /// Absolute penalty values.
    #[arg(long, value_delimiter = ',', conflicts_with = "ratios")]
    pub values: Vec<f64>,
    /// Penalties as fractions of the smallest fully-shrinking penalty
    /// (default 0, 0.05, ..., 1).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    #[command(flatten)]
    pub em: EmArgs,
    #[command(flatten)]
    pub ca: CaArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset CSV (with a `label` column for clustering metrics); repeat per replicate.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Fitted parameter JSON, paired with --data in order.
    #[arg(long, num_args = 1..)]
    pub params: Vec<PathBuf>,
    /// True parameters (params or scenario JSON) for sensitivity/specificity.
    #[arg(long)]
    pub true_params: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
