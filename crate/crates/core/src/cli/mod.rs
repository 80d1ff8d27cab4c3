//! Command-line front end. Each subcommand writes CSV tables and a JSON
//! summary into `--out`; every file starts with a provenance block (tool
//! version, command, config hash, seed) so any number can be traced back to
//! its inputs.

mod commands;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::equilibrium::EquilibriumError;
use crate::linalg::LinalgError;
use crate::model::{LatticeError, ModelError};
use crate::simulate::SimError;

#[derive(Debug, Parser)]
#[command(name = "densjump", version, about = "Density-dependent Markov jump processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check spanning, fixed point, stability and rate positivity.
    Validate(ValidateArgs),
    /// Certificate, lattice constants, cutoff time and the ODE flow.
    Analyze(AnalyzeArgs),
    /// Exact SSA paths, free or restricted to a ball.
    Simulate(SimulateArgs),
    /// Stationary law of the chain restricted to a ball.
    Equilibrium(EquilibriumArgs),
    /// TV-to-equilibrium profile around the cutoff time.
    Cutoff(CutoffArgs),
    /// Coupled pairs: mean distance and coalescence over time.
    Couple(CoupleArgs),
    /// Index the artifacts in a directory and emit gnuplot .dat copies.
    Report(ReportArgs),
}

/// Flags shared by the model-based subcommands. `workers` and `out` do not
/// affect results and are excluded from the config hash.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Model config file; the SIR model with (alpha, beta, gamma) = (2, 1, 1)
    /// when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Thread count; defaults to the available parallelism.
    #[arg(long)]
    #[serde(skip)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "densjump-out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Certified rate as a fraction of the spectral gap.
    #[arg(long, default_value_t = 0.9)]
    pub rho_fraction: f64,
    /// Starting guess for the fixed-point search (density units); all ones
    /// by default.
    #[arg(long, value_parser = parse_vec_f64)]
    pub guess: Option<FloatList>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "N", default_value_t = 100)]
    pub n: u64,
    /// Initial density for the flow and the cutoff time; all ones by default.
    #[arg(long, value_parser = parse_vec_f64)]
    pub x0: Option<FloatList>,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "N", default_value_t = 100)]
    pub n: u64,
    /// Initial density; `X0 = round(N x0)`. Defaults to all ones, or to the
    /// fixed point when `--delta` is given.
    #[arg(long, value_parser = parse_vec_f64)]
    pub x0: Option<FloatList>,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Restrict the chain to the ball of this M-radius around the fixed point.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Observation spacing. A single replicate without `--dt` records every
    /// event; otherwise the default is `horizon / 100`.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "N", default_value_t = 30)]
    pub n: u64,
    /// Ball radius; 0.95 of the inscribed radius by default.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Skip the exact solve and estimate from one long path.
    #[arg(long)]
    pub empirical: bool,
    /// Jumps in the empirical estimate.
    #[arg(long, default_value_t = 1_000_000)]
    pub steps: u64,
    #[arg(long, default_value_t = crate::equilibrium::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CutoffArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "N", default_value_t = 50)]
    pub n: u64,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_parser = parse_vec_f64)]
    pub x0: Option<FloatList>,
    /// Offsets from the cutoff time: `a:step:b` (inclusive) or a comma list.
    #[arg(long, default_value = "-3:0.25:6", value_parser = parse_grid)]
    pub s_grid: FloatList,
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    /// Jumps in the empirical equilibrium used when the exact solve is over
    /// the state cap.
    #[arg(long, default_value_t = 1_000_000)]
    pub steps: u64,
    #[arg(long, default_value_t = crate::equilibrium::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoupleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "N", default_value_t = 400)]
    pub n: u64,
    /// Number of coupled pairs.
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    /// Density of the first copy. Both starts default to the fixed point
    /// offset by `+-0.05 N` along the first M-unit axis, so `H(0) ~ 0.1 N`.
    #[arg(long, value_parser = parse_vec_f64)]
    pub x0: Option<FloatList>,
    /// Density of the second copy.
    #[arg(long, value_parser = parse_vec_f64)]
    pub v0: Option<FloatList>,
    #[arg(long, default_value_t = 0.25)]
    pub dt: f64,
    /// Upper end of the window for the log-mean-distance slope.
    #[arg(long, default_value_t = 5.0)]
    pub fit_until: f64,
    /// Fixed contractive threshold; scanned when omitted.
    #[arg(long)]
    pub k2: Option<f64>,
    /// Radius of the threshold scan as a fraction of the inscribed radius.
    #[arg(long, default_value_t = 0.25)]
    pub scan_fraction: f64,
    /// Also write every event of pair 0.
    #[arg(long)]
    pub dump_pair: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory holding earlier outputs; the index and .dat files are
    /// written there.
    #[arg(long, default_value = "densjump-out")]
    pub out: PathBuf,
}

/// Failure classes with stable exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 1.
    #[error("i/o error: {0}")]
    Io(String),
    /// Exit code 1.
    #[error("parse error: {0}")]
    Parse(String),
    /// Exit code 2.
    #[error("validation failed: {0}")]
    Validation(String),
    /// Exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Expr(_)
            | ModelError::Syntax { .. }
            | ModelError::DimensionMismatch { .. }
            | ModelError::Invalid(_) => CliError::Parse(e.to_string()),
            ModelError::OutsideDomain { .. }
            | ModelError::BadRate { .. }
            | ModelError::Derivative { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Model(m) => m.into(),
            DynamicsError::NotHurwitz { .. } | DynamicsError::Precondition(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            SimError::Precondition(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Model(m) => m.into(),
            EquilibriumError::Sim(s) => s.into(),
            EquilibriumError::Dynamics(d) => d.into(),
            EquilibriumError::Linalg(_) | EquilibriumError::NotConverged { .. } => {
                CliError::Numerical(e.to_string())
            }
            EquilibriumError::Csv(_) => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// A list-valued flag taken as one argument.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

/// Comma-separated reals.
pub fn parse_vec_f64(s: &str) -> Result<FloatList, String> {
    split_f64(s).map(FloatList)
}

fn split_f64(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            let t = p.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect()
}

/// `a:step:b` with both ends included, or a comma list; the result is
/// sorted.
pub fn parse_grid(s: &str) -> Result<FloatList, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let mut grid = match parts.as_slice() {
        [a, step, b] => {
            let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0 && a.is_finite() && b.is_finite() && b >= a) {
                return Err("range needs a positive step and a <= b".into());
            }
            let k = ((b - a) / step + 1e-9).floor() as usize;
            (0..=k).map(|i| a + i as f64 * step).collect()
        }
        [_] => split_f64(s)?,
        _ => return Err("expected a:step:b or a comma list".into()),
    };
    if grid.is_empty() {
        return Err("grid is empty".into());
    }
    grid.sort_by(f64::total_cmp);
    Ok(FloatList(grid))
}

/// Parse arguments, run the subcommand on a pool of `--workers` threads
/// and map failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Returns the exit code for runs that complete but report a failed check.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    let workers = match &cli.command {
        Command::Validate(a) => a.common.workers,
        Command::Analyze(a) => a.common.workers,
        Command::Simulate(a) => a.common.workers,
        Command::Equilibrium(a) => a.common.workers,
        Command::Cutoff(a) => a.common.workers,
        Command::Couple(a) => a.common.workers,
        Command::Report(_) => None,
    };
    let threads = workers
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1);
    if threads == 0 {
        return Err(CliError::Validation("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::Analyze(a) => commands::analyze(&a).map(|_| 0),
        Command::Simulate(a) => commands::simulate(&a).map(|_| 0),
        Command::Equilibrium(a) => commands::equilibrium(&a).map(|_| 0),
        Command::Cutoff(a) => commands::cutoff(&a).map(|_| 0),
        Command::Couple(a) => commands::couple(&a).map(|_| 0),
        Command::Report(a) => report::report(&a.out).map(|_| 0),
    })
}
