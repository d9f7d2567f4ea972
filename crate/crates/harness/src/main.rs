use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Snapshot-ensemble knowledge distillation experiment runner.
#[derive(Parser)]
#[command(name = "eekd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Suppress per-variant progress output.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed_override,
            quiet,
        } => match eekd_harness::run(&config, seed_override, quiet) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("{err}");
                ExitCode::from(err.exit_code() as u8)
            }
        },
    }
}
