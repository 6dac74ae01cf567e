//! `risklq` command-line front-end.
//!
//! Every command resolves a scenario (`builtin:NAME` or a TOML path), runs
//! one pipeline and writes JSON/CSV artifacts into `--out` (default from
//! `RISKLQ_OUT`). Failures print one JSON line on stderr and exit with a code
//! per error category.

mod commands;
mod output;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use risklq::ErrorCategory;
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Lib(risklq::Error),
    Io(String),
}

impl From<risklq::Error> for CliError {
    fn from(e: risklq::Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(s) => write!(f, "i/o error: {s}"),
        }
    }
}

impl CliError {
    /// Machine-readable category and process exit code. Usage errors
    /// detected by the argument parser exit with 2.
    pub fn category(&self) -> (&'static str, u8) {
        match self {
            CliError::Io(_) => ("io", 13),
            CliError::Lib(e) => match e.category() {
                ErrorCategory::Structural => ("structural", 3),
                ErrorCategory::Parse => ("parse", 4),
                ErrorCategory::Config => ("config", 5),
                ErrorCategory::Assumption => ("assumption", 6),
                ErrorCategory::Singularity => ("singularity", 7),
                ErrorCategory::NonConvergence => ("non_convergence", 8),
                ErrorCategory::Infeasible => ("infeasible", 9),
                ErrorCategory::Divergence => ("divergence", 10),
                ErrorCategory::Unsupported => ("unsupported", 11),
                ErrorCategory::Breakdown => ("breakdown", 12),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fully observed risk-aware LQR.
    Lqr,
    /// Output feedback with a Kalman filter (needs `[measurement]`).
    Lqg,
    /// Exponential-cost baseline; output feedback when `[measurement]` is present.
    Leqg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Scenario: `builtin:NAME` or a path to a TOML file.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Override the scenario horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Lqr)]
    pub mode: Mode,
    /// Monte-Carlo sample count for noise moments without a closed form.
    #[arg(long, default_value_t = 1_000_000)]
    pub mc_samples: usize,
    /// Output directory.
    #[arg(long, env = "RISKLQ_OUT", default_value = "risklq-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated multipliers.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub mu: Vec<f64>,
    /// Exponential-cost parameter (leqg mode).
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BisectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Risk budget on the predictive variance.
    #[arg(long, allow_hyphen_values = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e8)]
    pub mu_max: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub mu: Vec<f64>,
    /// Adds the exponential-cost baseline with this parameter.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub rollouts: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BreakdownArgs {
    #[command(flatten)]
    pub common: Common,
    /// Upper end of the θ search.
    #[arg(long, default_value_t = risklq::baselines::DEFAULT_THETA_CAP)]
    pub theta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReproduceArgs {
    /// One of fig2, fig3, fig4, fig5, fig6.
    pub figure: String,
    #[command(flatten)]
    pub common: Common,
    /// Risk-aware multipliers; figure-specific defaults.
    #[arg(long, value_delimiter = ',')]
    pub mu: Option<Vec<f64>>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Replace the process noise by zero.
    #[arg(long)]
    pub zero_noise: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gain schedules, steady gains and the assumption report per μ.
    Synthesize(SynthesizeArgs),
    /// Smallest μ meeting the risk budget `--eps`.
    Bisect(BisectArgs),
    /// Closed-loop rollouts with CRN-paired seeds.
    Simulate(SimulateArgs),
    /// Expected cost and risk of the optimal policy per μ.
    EvaluateRisk(SynthesizeArgs),
    /// Largest θ for which the exponential-cost recursion completes.
    BreakdownScan(BreakdownArgs),
    /// Data series behind the experiment figures.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Parser)]
#[command(
    name = "risklq",
    version,
    about = "Risk-constrained LQR/LQG synthesis and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synthesize(a) => commands::synthesize(&a),
        Command::Bisect(a) => commands::bisect(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::EvaluateRisk(a) => commands::evaluate_risk(&a),
        Command::BreakdownScan(a) => commands::breakdown_scan(&a),
        Command::Reproduce(a) => reproduce::run(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = e.category();
            let line = serde_json::json!({
                "error": { "category": category, "exit_code": code, "message": e.to_string() }
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
