use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dsm_core::NormKind;

#[derive(Debug, Parser)]
#[command(
    name = "dsm",
    version,
    about = "Regularized equations F(u) + eps u = 0: DSM flow, fixed-point construction, eps-paths and probes"
)]
pub struct Cli {
    /// Run configuration to replay: a config JSON, a JSON artifact, or a CSV
    /// artifact with an embedded `# config:` line.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, env = "DSM_OUT_DIR", value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Repeat for more log output (warn, info, debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the flow at one eps and check the decay law and trajectory bounds.
    Flow(FlowArgs),
    /// Solve along a geometric eps-schedule and fit the convergence rate.
    Path(PathArgs),
    /// Fixed-point construction around the known root with radius/contraction gates.
    Contract(ContractArgs),
    /// Track |v_eps| for a linear problem and classify it as bounded or divergent.
    Probe(ProbeArgs),
    /// Jacobian self-test, derivative bounds and resolvent growth fit.
    Check(CheckArgs),
    /// List the built-in problems and their parameters.
    Problems,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Built-in problem name (see `dsm problems`).
    #[arg(long, default_value = "cubic", conflicts_with = "matrix")]
    pub problem: String,
    /// Dimension.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Problem parameter, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub params: Vec<(String, f64)>,
    /// Linear problem from CSV: n rows of the matrix, then the right-hand side.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    #[arg(long, default_value = "l2", value_parser = parse_norm)]
    pub norm: NormKind,
    /// Seed for problem generation and all sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace the analytic second-derivative bound.
    #[arg(long)]
    pub m2: Option<f64>,
    /// Replace the analytic third-derivative bound.
    #[arg(long)]
    pub m3: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RegArgs {
    #[arg(long, default_value_t = 1.0)]
    pub eps0: f64,
    /// Resolvent growth exponent; the problem's analytic value by default.
    #[arg(long)]
    pub k: Option<f64>,
    /// Resolvent growth constant; the problem's analytic value by default.
    #[arg(long)]
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FlowTolArgs {
    /// Target residual.
    #[arg(long, default_value_t = 1e-8)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = 100.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_steps: usize,
    /// Initial state: one value for every component, or n comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub w0: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FixedPointArgs {
    /// Step-norm tolerance of the fixed-point iteration.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Report rho >= 1 or eta >= 1 as warnings instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Samples for derivative bounds when no analytic values exist.
    #[arg(long, default_value_t = 200)]
    pub bound_samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 0.1)]
    pub eps_start: f64,
    #[arg(long, default_value_t = 0.1)]
    pub factor: f64,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub reg: RegArgs,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub tol: FlowTolArgs,
    /// Random dual functionals for the decay check.
    #[arg(long, default_value_t = 20)]
    pub h_samples: usize,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub reg: RegArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value = "flow", value_parser = ["flow", "contraction", "hybrid"])]
    pub method: String,
    #[command(flatten)]
    pub tol: FlowTolArgs,
    #[command(flatten)]
    pub fixed_point: FixedPointArgs,
    /// Start every flow solve from w0 instead of the previous solution.
    #[arg(long)]
    pub cold: bool,
    /// Worker threads for independent solves.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ContractArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub reg: RegArgs,
    /// One or more eps values, comma-separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.1")]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub fixed_point: FixedPointArgs,
    /// Solve F(p) + eps (p - q) = 0 instead; q is `zero`, `solution`, or n comma-separated values.
    #[arg(long, value_name = "Q", allow_hyphen_values = true)]
    pub shift: Option<String>,
    /// Shortcut for `--param psi_norm=VALUE`.
    #[arg(long)]
    pub psi_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Random points for the Jacobian self-test.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Samples for the derivative bounds.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// eps values for the resolvent growth fit, comma-separated.
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 1..,
        default_value = "1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8"
    )]
    pub eps_schedule: Vec<f64>,
    /// Point for the resolvent growth fit; the known root or ball center by default.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub at: Vec<f64>,
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    s.parse().map_err(|e: dsm_core::DsmError| e.to_string())
}
