//! Configuration-driven command-line frontend.
//!
//! Exit codes: 0 success, 1 usage or I/O error (including a missing config
//! file), 2 invalid configuration or input, 3 a verification or quality
//! check failed.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "bellflow",
    version,
    about = "Particle trajectories guided by a lattice Fock-space state"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve the state and write snapshots, norms and velocity fields.
    Evolve(CommonArgs),
    /// Run a trajectory ensemble and write trajectories and histograms.
    Simulate(CommonArgs),
    /// Run the identity, formulation and equivariance checks.
    Verify(CommonArgs),
    /// Print the jump rates out of one configuration at one time.
    Rates(RatesArgs),
    /// Integrate a Dirac particle path guided by a spinor packet.
    DiracDemo(CommonArgs),
}

#[derive(Debug, Args)]
pub(crate) struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides process.root_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides process.trajectories.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Worker threads; defaults to all cores. Does not change results.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Overrides output.directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct RatesArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    /// Comma-separated particle positions; empty for the vacuum.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    positions: Vec<f64>,
}

pub(crate) struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    pub(crate) fn verification(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Validation { .. } | Error::Unsupported(_) | Error::DimensionTooLarge { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Evolve(a) => commands::evolve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Verify(a) => commands::verify(a),
        Command::Rates(a) => commands::rates(a),
        Command::DiracDemo(a) => commands::dirac_demo(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
