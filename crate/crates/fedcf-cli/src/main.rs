//! fedcf: train and evaluate personalized car-following models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedcf_cli::commands::{self, TrainMode};

#[derive(Parser)]
#[command(
    name = "fedcf",
    about = "Federated training of personalized car-following driver models",
    version
)]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true, default_value = "configs/default.toml")]
    config: PathBuf,

    /// Override the output directory from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the base random seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a follower controller against the configured leader profile.
    Simulate {
        /// Controller name from [controllers]; defaults to the [simulate] entry.
        #[arg(long)]
        controller: Option<String>,
    },
    /// Train models on the experiment-1 fleet and write parameter JSON.
    Train {
        /// Training mode.
        #[arg(long, value_enum)]
        mode: TrainMode,
        /// Anchor parameters JSON (required for --mode personalize).
        #[arg(long)]
        anchor: Option<PathBuf>,
    },
    /// Run a full experiment and write its report and prediction CSVs.
    Experiment {
        /// Which experiment to run.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        which: u8,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { controller } => {
            commands::cmd_simulate(&cli.config, controller.as_deref(), cli.out, cli.seed)
        }
        Command::Train { mode, anchor } => {
            commands::cmd_train(&cli.config, mode, anchor.as_deref(), cli.out, cli.seed)
        }
        Command::Experiment { which } => {
            commands::cmd_experiment(&cli.config, which, cli.out, cli.seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
