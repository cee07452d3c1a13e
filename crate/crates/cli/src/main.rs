use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nslin_cli::commands::{self, EvalOptions, TrainOptions, VerifyOptions};

#[derive(Parser)]
#[command(name = "nslin", version, about = "Linearized least-squares training for stationary Navier-Stokes flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a configuration file and write loss history, model, profiles and grid.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the file and $NSLIN_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate and print the resolved configuration, then stop.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a saved model without training.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Height of the line profile.
        #[arg(long)]
        y0: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the derivative, identity and sampler self-checks.
    Verify {
        /// Defaults to the bundled benchmark configuration.
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also check that this model checkpoint loads.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out, dry_run } => {
            commands::cmd_train(&config, &TrainOptions { seed, out, dry_run }).map(|_| ())
        }
        Command::Eval { checkpoint, config, y0, out } => {
            commands::cmd_eval(&checkpoint, &config, &EvalOptions { y0, out }).map(|_| ())
        }
        Command::Verify { config, seed, checkpoint } => {
            commands::cmd_verify(config.as_deref(), &VerifyOptions { seed, checkpoint }).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
