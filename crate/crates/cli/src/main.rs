//! `flockcp`: thresholds, exact simulation and Monte Carlo experiments for
//! the flock contact process.
//!
//! Exit codes: 0 ok, 1 usage or input error, 2 coupling violation,
//! 3 statistical bracket failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flockcp_core::{FlockError, Geometry, Phi};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] FlockError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(FlockError::Bracket { .. }) => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Model(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "flockcp", version, about = "Flock contact process: thresholds, simulation and experiments")]
pub struct Cli {
    /// TOML file with run settings; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ParamArgs {
    /// Lattice dimension.
    #[arg(short = 'd', long = "dim")]
    dim: Option<usize>,
    /// Maximum flock size N.
    #[arg(short = 'N', long = "max-flock")]
    max_flock: Option<u32>,
    /// External birth rate per full neighbour.
    #[arg(long)]
    lambda: Option<f64>,
    /// Internal growth rate per individual, or `inf`.
    #[arg(long)]
    phi: Option<Phi>,
    /// `sparse` or `torus:<side>`.
    #[arg(long)]
    geometry: Option<Geometry>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ParamArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            dim: self.dim,
            max_flock: self.max_flock,
            lambda: self.lambda,
            phi: self.phi,
            geometry: self.geometry.map(|g| g.to_string()),
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcessArg {
    Eta,
    Contact,
    Branching,
}

impl ProcessArg {
    fn name(self) -> &'static str {
        match self {
            ProcessArg::Eta => "eta",
            ProcessArg::Contact => "contact",
            ProcessArg::Branching => "branching",
        }
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Censoring horizon.
    #[arg(long)]
    t_max: Option<f64>,
    /// `single:<k>`, `all-n` or `explicit:<site>=<state>;...`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, value_enum)]
    process: Option<ProcessArg>,
    /// Flock cap for the branching process.
    #[arg(long)]
    cap: Option<u64>,
}

impl RunArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            t_max: self.t_max,
            init: self.init.clone(),
            process: self.process.map(|p| p.name().to_string()),
            cap: self.cap,
            ..self.params.to_config()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriticalKindArg {
    Lambda,
    #[value(name = "N", alias = "n")]
    N,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extinction threshold m and the probability that a flock fills.
    Threshold {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Galton-Watson extinction probability of the founder process.
    Gw {
        #[command(flatten)]
        params: ParamArgs,
        /// Tabulate the offspring law up to this count.
        #[arg(long, default_value_t = 64)]
        k_max: usize,
        /// Also simulate this many lineages.
        #[arg(long)]
        lineages: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        generations: usize,
        /// Population counted as escape in simulated lineages.
        #[arg(long, default_value_t = 10_000)]
        population_cap: u64,
    },
    /// One simulation run.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Write one tab-separated record per event to this file.
        #[arg(long)]
        log_events: Option<PathBuf>,
    },
    /// Survival probability estimate over independent trials.
    Survival {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        trials: Option<u64>,
        /// Result table (CSV); a manifest is written alongside.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Survival estimates over a parameter grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long = "Ns", value_delimiter = ',')]
        max_flocks: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        phis: Vec<Phi>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bisection for the critical lambda (N = 1) or the critical flock size.
    Critical {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_enum)]
        kind: CriticalKindArg,
        /// `low,high`; defaults to 0.5,5 for lambda and 1,<analytic bound> for N.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        bracket: Option<Vec<f64>>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, alias = "trials")]
        trials_per_point: Option<u64>,
        #[arg(long)]
        t_max: Option<f64>,
        /// Target bracket width for lambda.
        #[arg(long)]
        resolution: Option<f64>,
        /// `single` (one individual) or `all-n` (full torus); flock-size search only.
        #[arg(long, default_value = "single")]
        start: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shared-clock coupled runs, counting ordering violations.
    CoupleCheck {
        #[command(flatten)]
        params: ParamArgs,
        /// Smaller cap of the flock-size coupling.
        #[arg(long, default_value_t = 2)]
        n1: u32,
        /// Larger cap of the flock-size coupling.
        #[arg(long, default_value_t = 5)]
        n2: u32,
        /// Instead couple the given finite phi against phi = inf (cap N).
        #[arg(long)]
        against_inf: bool,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean occupied fraction of a full torus over time (requires m < 1).
    Density {
        #[command(flatten)]
        params: ParamArgs,
        /// Observation times; defaults to 0,10,...,100.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
