//! `oms`: runs keyword-generation campaigns, simulates sponsored-search
//! markets and evaluates keyword sets.
//!
//! Exit codes: 0 success, 2 aborted round or failed A/B arm, 3 invalid
//! configuration or input, 1 any other I/O failure.

mod campaign;
mod config;
mod error;
mod inputs;
mod report;
mod sim;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Config, PolicyName};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "oms", version, about = "Multi-objective, self-reflective keyword generation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run campaign rounds against the stored state.
    Run {
        /// Campaign state file; created on the first round.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Rounds to run in this invocation.
        #[arg(long, default_value_t = 1)]
        rounds: u32,
        /// Market seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Reject keywords whose search volume cannot be fetched.
        #[arg(long)]
        strict_volume: bool,
    },
    /// Run one policy against the simulated market.
    Simulate {
        #[arg(long, value_enum, default_value_t = PolicyName::Oms)]
        policy: PolicyName,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare two policies on independent copies of the simulated market.
    Abtest {
        #[arg(long, value_enum)]
        a: Option<PolicyName>,
        #[arg(long, value_enum)]
        b: Option<PolicyName>,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comparison CSV path, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank keywords in a performance CSV by TOPSIS score.
    Rank { input: PathBuf },
    /// Partition points or keywords with affinity propagation.
    Cluster { input: PathBuf },
    /// Generate and reflect one keyword set without deploying it.
    Generate {
        /// Read rejected and deployed keywords from this state; never written.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict_volume: bool,
    },
    /// Score keyword sets against reference text.
    Evaluate { input: PathBuf },
    /// Export plot data from a state, A/B report or evaluation report.
    Report { input: PathBuf },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let json = cli.json;
    match cli.command {
        Command::Run { state, rounds, seed, strict_volume } => {
            campaign::run(&cfg, state, rounds, seed, strict_volume, json)
        }
        Command::Generate { state, seed, strict_volume } => campaign::generate(&cfg, state, seed, strict_volume, json),
        Command::Simulate { policy, rounds, seed } => sim::simulate(&cfg, policy, rounds, seed, json),
        Command::Abtest { a, b, rounds, seed, out } => sim::abtest(&cfg, a, b, rounds, seed, out, json),
        Command::Rank { input } => inputs::rank(&cfg, &input, json),
        Command::Cluster { input } => inputs::cluster(&cfg, &input, json),
        Command::Evaluate { input } => inputs::evaluate(&cfg, &input, json),
        Command::Report { input } => report::report(&input, json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Pretty JSON followed by a newline.
pub(crate) fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    writeln!(std::io::stdout().lock(), "{text}")?;
    Ok(())
}
