use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod report;

use config::{RunArgs, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "protoknn", version, about = "Prototype retrieval experiments on a synthetic point cloud bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the toy datasets, features, trained heads and scenes
    GenData(RunArgs),
    /// Build a prototype store from a train feature file
    BuildProtos(RunArgs),
    /// Report baseline, retrieval-only and fused metrics
    Eval(RunArgs),
    /// Grid search over k and gamma on the validation split
    Sweep(RunArgs),
    /// Purity and coverage of prototype neighbourhoods
    Diagnose(RunArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, f): (&RunArgs, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::GenData(a) => (a, commands::gen_data),
        Command::BuildProtos(a) => (a, commands::build_protos),
        Command::Eval(a) => (a, commands::eval),
        Command::Sweep(a) => (a, commands::sweep),
        Command::Diagnose(a) => (a, commands::diagnose),
    };
    f(&RunConfig::from_args(args)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
