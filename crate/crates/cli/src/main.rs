//! `pob-sim`: analyses, attack-cost estimates and scenario simulations.

mod commands;
mod report;

use clap::{Args, Parser, Subcommand};
use report::Format;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "pob-sim", version, about = "Consensus-threshold analysis and protocol simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Output {
    /// Directory for report files; stdout when omitted.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form analyses.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
        #[command(flatten)]
        output: Output,
    },
    /// Price-adaptive attack cost from a price/volume series.
    EstimateCost {
        #[command(flatten)]
        args: commands::EstimateArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Run a scenario file or a bundled scenario.
    Simulate {
        #[command(flatten)]
        args: commands::SimulateArgs,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Minimum participation for a corruption bound.
    Thresholds(commands::ThresholdArgs),
    /// Bias reduction from raising mean propensity.
    Bias(commands::BiasArgs),
    /// Capital thresholds and an ICO's share of them.
    Capital(commands::CapitalArgs),
    /// Equilibrium class of the participation game.
    Game(commands::GameArgs),
    /// Equilibrium staking allocation over a wealth grid.
    Ess(commands::EssArgs),
    /// Gambler's-ruin failure probability by extension length.
    Ruin(commands::RuinArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    InsufficientVolume(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Infeasible(_) | CliError::InsufficientVolume(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("POB_SIM_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze { what, output } => {
            let r = match what {
                Analyze::Thresholds(a) => commands::thresholds(&a),
                Analyze::Bias(a) => commands::bias(&a),
                Analyze::Capital(a) => commands::capital(&a),
                Analyze::Game(a) => commands::game(&a),
                Analyze::Ess(a) => commands::ess(&a),
                Analyze::Ruin(a) => commands::ruin(&a),
            };
            r.and_then(|r| Ok(r.emit(output.format, output.out.as_deref())?))
        }
        Command::EstimateCost { args, output } => {
            commands::estimate_cost(&args).and_then(|r| Ok(r.emit(output.format, output.out.as_deref())?))
        }
        Command::Simulate { args, output } => commands::simulate(&args, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pob-sim: {e}");
            ExitCode::from(e.code())
        }
    }
}
