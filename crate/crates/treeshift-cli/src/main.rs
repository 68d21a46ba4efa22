//! `treeshift` — detect adaptive shifts in a quantitative trait on an
//! ultrametric phylogeny.
//!
//! Subcommands: `simulate` (draw traits under a shifted model), `fit`
//! (EM at fixed shift count), `select` (penalized shift-count selection),
//! `enumerate`/`count` (equivalence-class combinatorics), and `simstudy`
//! (replicated end-to-end benchmark).
//!
//! Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.
//! Logging goes to stderr; set `TREESHIFT_LOG` (error/warn/info/debug/
//! trace) to change the level.

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod io;
mod run;

#[derive(Parser, Debug)]
#[command(
    name = "treeshift",
    version,
    about = "Adaptive-shift detection for quantitative traits on phylogenies",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate tip traits under a shifted drift or selection model.
    Simulate(run::SimulateArgs),
    /// Fit a model with a fixed number of shifts by EM.
    Fit(run::FitArgs),
    /// Pick the number of shifts by penalized model selection.
    Select(run::SelectArgs),
    /// List every parsimonious shift allocation equivalent to an input.
    Enumerate(run::EnumerateArgs),
    /// Count equivalence classes or realizable tip partitions.
    Count(run::CountArgs),
    /// Run a replicated simulation study from a config file.
    Simstudy(run::SimstudyArgs),
}

/// Exit code 2: the input or invocation is wrong (fix the command).
/// Exit code 3: the computation failed numerically (inspect the data).
pub struct CliError {
    code: u8,
    message: String,
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(message: String) -> CliError {
    CliError { code: 2, message }
}

pub fn data(message: String) -> CliError {
    CliError { code: 3, message }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<treeshift::Error> for CliError {
    fn from(e: treeshift::Error) -> CliError {
        use treeshift::Error::*;
        let code = match &e {
            // The caller handed us something malformed.
            NewickParse { .. } | InvalidTree(_) | NotUltrametric | UnknownLabel(_)
            | InvalidParams(_) | InvalidInput(_) | Mismatch(_) | Homoplasy { .. } => 2,
            // The inputs parsed but the computation broke down.
            EnumerationCapExceeded { .. } | SingularCovariance { .. } | QuadratureFailure(_)
            | RootFindingFailure(_) | LassoDegenerate | MonotonicityViolation { .. } => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let env = env_logger::Env::new().filter_or("TREESHIFT_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("treeshift: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.jobs.is_some() {
        log::warn!("--jobs has no effect: built without the parallel feature");
    }

    let result = match &cli.command {
        Command::Simulate(args) => run::cmd_simulate(args),
        Command::Fit(args) => run::cmd_fit(args),
        Command::Select(args) => run::cmd_select(args),
        Command::Enumerate(args) => run::cmd_enumerate(args),
        Command::Count(args) => run::cmd_count(args),
        Command::Simstudy(args) => run::cmd_simstudy(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treeshift: {e}");
            ExitCode::from(e.code)
        }
    }
}
