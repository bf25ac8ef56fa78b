//! `ccst` — cross-client style transfer federation simulator.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    AttackArgs, AugmentArgs, CliError, EvalArgs, GenDataArgs, ReportArgs, StylesArgs, SweepArgs,
    TrainArgs,
};
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "ccst",
    version,
    about = "Federated domain generalization via cross-client style transfer",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain image dataset.
    GenData(GenDataArgs),
    /// Compute per-client styles and assemble the broadcast bank.
    Styles(StylesArgs),
    /// Apply cross-client style transfer to every source client.
    Augment(AugmentArgs),
    /// Run the full pipeline: styles, bank, transfer, federated training.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a held-out target domain.
    Eval(EvalArgs),
    /// Run the {single, overall} x K control-experiment grid.
    Sweep(SweepArgs),
    /// Try to reconstruct images from shared style vectors.
    Attack(AttackArgs),
    /// Compare client histogram spread before and after transfer.
    Report(ReportArgs),
    /// Re-execute a run from its manifest, reproducing outputs exactly.
    Rerun {
        /// Path to a manifest.json written by a previous run.
        manifest: PathBuf,
    },
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::GenData(args) => args.run(),
        Command::Styles(args) => args.run(),
        Command::Augment(args) => args.run(),
        Command::Train(args) => args.run(),
        Command::Eval(args) => args.run(),
        Command::Sweep(args) => args.run(),
        Command::Attack(args) => args.run(),
        Command::Report(args) => args.run(),
        Command::Rerun { manifest } => {
            let loaded = RunManifest::load(manifest).map_err(CliError::Data)?;
            if loaded.command == "rerun" {
                return Err(CliError::Data("manifest records a rerun of a rerun".into()));
            }
            let argv = std::iter::once("ccst".to_string()).chain(loaded.argv.iter().cloned());
            let cli = Cli::try_parse_from(argv).map_err(|e| {
                CliError::Data(format!(
                    "manifest argv no longer parses ({})",
                    first_line(&e.to_string())
                ))
            })?;
            println!("rerunning `ccst {}`", loaded.argv.join(" "));
            dispatch(&cli.command)
        }
    }
}

fn first_line(text: &str) -> &str {
    text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("ccst: {}", first_line(&e.to_string()));
            eprintln!("run `ccst --help` for usage");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ccst: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
