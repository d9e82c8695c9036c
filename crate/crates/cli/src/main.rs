//! `urllc-lab`: sweeps, solvers, baselines, protocol comparisons and the env server.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 nothing feasible.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "urllc-lab",
    version,
    about = "Finite-blocklength delay lab for short-packet uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (key = value lines).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Fbl,
    Ibl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Gb,
    Gf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Single,
    Exhaustive,
    Greedy,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Expected,
    Sampled,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Total delay against blocklength on a uniform grid (writes sweep.csv, summary.json).
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Blocklength grid `start:stop:step` (inclusive).
        #[arg(long)]
        grid: Option<String>,
    },
    /// Adaptive against fixed TTIs under GB and GF (writes compare.csv).
    Compare {
        #[command(flatten)]
        common: Common,
        /// User counts `start:stop[:step]`; defaults to the scenario's.
        #[arg(long)]
        users: Option<String>,
        /// Comma-separated TTI levels in seconds.
        #[arg(long)]
        tti_levels: Option<String>,
    },
    /// Run one period and record every packet (writes stats.json, packets.csv).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replay a plan written by `optimize`.
        #[arg(long, conflicts_with = "tti")]
        plan: Option<PathBuf>,
        /// Fixed TTI in seconds with round-robin subchannels.
        #[arg(long)]
        tti: Option<f64>,
        #[arg(long, value_enum, default_value = "sampled")]
        mode: ModeArg,
    },
    /// Solve for subchannels and TTIs (writes plan.json).
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "adaptive")]
        solver: SolverArg,
        #[arg(long)]
        tti_levels: Option<String>,
        /// Evaluation budget for the exhaustive solver.
        #[arg(long)]
        budget: Option<u128>,
    },
    /// Serve the step environment over stdio or TCP.
    ServeEnv {
        /// Preloaded scenario; clients may also name one in `hello`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, conflicts_with = "listen", required_unless_present = "listen")]
        stdio: bool,
        /// Address such as 127.0.0.1:7070.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("URLLC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Sweep { common, grid } => commands::sweep(&common, grid.as_deref()),
        Command::Compare {
            common,
            users,
            tti_levels,
        } => commands::compare(&common, users.as_deref(), tti_levels.as_deref()),
        Command::Simulate {
            common,
            plan,
            tti,
            mode,
        } => commands::simulate(&common, plan.as_deref(), tti, mode),
        Command::Optimize {
            common,
            solver,
            tti_levels,
            budget,
        } => commands::optimize(&common, solver, tti_levels.as_deref(), budget),
        Command::ServeEnv {
            scenario,
            stdio,
            listen,
        } => commands::serve_env(scenario.as_deref(), stdio, listen.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("urllc-lab: {e}");
            ExitCode::from(e.code())
        }
    }
}
