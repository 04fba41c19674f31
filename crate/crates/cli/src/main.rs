//! Command-line front end: simulate, adjoint, follower, stackelberg, report.

mod cache;
mod commands;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use stackelberg_traffic::Error;

#[derive(Parser, Debug)]
#[command(name = "stackelberg-traffic", version, about = "Leader-follower junction control with traffic and pollution models")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long, global = true, env = "STACKELBERG_SCENARIO")]
    pub scenario: Option<PathBuf>,
    /// Output directory; defaults to the scenario's `output_dir`, else `out/<id>`.
    #[arg(long, global = true, env = "STACKELBERG_OUT")]
    pub out: Option<PathBuf>,
    /// Seed for every random stream, overriding the scenario seeds.
    #[arg(long, global = true, env = "STACKELBERG_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for fitness evaluations.
    #[arg(long, global = true, env = "STACKELBERG_THREADS")]
    pub threads: Option<usize>,
    /// Restriction bounds 0.2 / 0.8 instead of the scenario's.
    #[arg(long, global = true, env = "STACKELBERG_RELAXED")]
    pub relaxed: bool,
    /// Follower solves by GA followed by local polish.
    #[arg(long, global = true, env = "STACKELBERG_HYBRID_FOLLOWER")]
    pub hybrid_follower: bool,
    /// Adjoint cache file; defaults to `<out>/adjoint.bin`.
    #[arg(long, global = true, env = "STACKELBERG_ADJOINT_CACHE")]
    pub adjoint_cache: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the traffic model and write density/queue tables and J_T.
    Simulate {
        /// Controls (a ControlSet, or any JSON with a `controls` field); uniform if absent.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Solve the adjoint once, cache it and export VTK fields and level curves.
    Adjoint {
        /// Number of VTK frames of the time series.
        #[arg(long, default_value_t = 24)]
        frames: usize,
        /// Number of level curves of the time-averaged field.
        #[arg(long, default_value_t = 12)]
        levels: usize,
    },
    /// Best follower response to fixed restrictions.
    Follower {
        /// Restrictions (a ControlSet, or JSON with a `controls` field); uniform if absent.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Solve the leader-follower problem.
    Stackelberg,
    /// Compare runs. With no run directories, runs the restrictive, relaxed
    /// and non-optimal cases of `--scenario` first.
    Report {
        /// Directories holding `run.json` files.
        runs: Vec<PathBuf>,
    },
}

/// Failures mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    Io(PathBuf, std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Numerical { .. }) => 3,
            _ => 2,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message, problems) = match self {
            Failure::Core(e) => {
                let kind = match e {
                    Error::Domain { .. } => "domain",
                    Error::Config(_) => "config",
                    Error::Shape(_) => "shape",
                    Error::Infeasible(_) => "infeasible",
                    Error::Validation(_) => "validation",
                    Error::Numerical { .. } => "numerical",
                    Error::Parse { .. } => "parse",
                    Error::Io { .. } => "io",
                };
                let problems = match e {
                    Error::Validation(list) => list.clone(),
                    _ => Vec::new(),
                };
                (kind, e.to_string(), problems)
            }
            Failure::Usage(m) => ("usage", m.clone(), Vec::new()),
            Failure::Io(path, e) => ("io", format!("{}: {e}", path.display()), Vec::new()),
        };
        let mut v = json!({ "kind": kind, "message": message, "exit_code": self.exit_code() });
        if !problems.is_empty() {
            v["problems"] = json!(problems);
        }
        json!({ "error": v })
    }
}

/// What a successful command reports back.
pub enum Outcome {
    Done,
    BudgetExhausted,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        if let Some(n) = cli.common.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}")))?;
        }
        match &cli.command {
            Command::Simulate { controls } => commands::simulate(&cli.common, controls.as_deref()),
            Command::Adjoint { frames, levels } => commands::adjoint(&cli.common, *frames, *levels),
            Command::Follower { controls } => commands::follower(&cli.common, controls.as_deref()),
            Command::Stackelberg => commands::stackelberg(&cli.common),
            Command::Report { runs } => commands::report(&cli.common, runs),
        }
    })();
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::BudgetExhausted) => ExitCode::from(4),
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}
