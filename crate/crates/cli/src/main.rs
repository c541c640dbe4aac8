mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunArgs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ctlnet::Error),
    #[error("{0}")]
    Gradcheck(String),
    #[error("{failed} of {total} runs failed")]
    RunsFailed { failed: usize, total: usize },
}

impl CliError {
    fn category(&self) -> &'static str {
        use ctlnet::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(E::Config { .. } | E::Shape(_) | E::Contract(_)) => "config",
            CliError::Core(E::Io { .. } | E::Checkpoint(_)) => "io",
            CliError::Core(E::Schema(_) | E::Parse { .. } | E::Ordering { .. } | E::Size(_) | E::Json(_)) => "schema",
            CliError::Core(E::Divergence { .. }) => "divergence",
            CliError::Core(E::UndefinedR2 { .. }) => "numerical",
            CliError::Gradcheck(_) => "gradcheck",
            CliError::RunsFailed { .. } => "runs",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" | "config" => 1,
            "io" | "schema" => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctlnet", version, about = "Train, evaluate and compare CTLNet forecasters")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic OHLCV series to CSV.
    Synth(RunArgs),
    /// Train one model and save checkpoint, report and loss curve.
    Train(RunArgs),
    /// Score a saved checkpoint on the train or test split.
    Evaluate(RunArgs),
    /// Train several architectures on the same data and tabulate them.
    Compare(RunArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
