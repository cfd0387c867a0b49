use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kanmixer::cli::{self, AblateOptions};

#[derive(Parser)]
#[command(name = "kanmixer", version, about = "Multi-scale KAN forecaster")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, report and epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the validation or test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding checkpoint.ckpt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Explicit checkpoint file, overrides --out.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one of the built-in ablation grids.
    Ablate {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Comma-separated horizons; defaults to the config horizon.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print parameter and MAC counts and time one warmup epoch.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(args: Args) -> kanmixer::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match args.command {
        Command::Train { config, out, seed } => {
            cli::cmd_train(&config, &out, seed, &mut stdout)?;
        }
        Command::Eval {
            config,
            out,
            checkpoint,
            split,
            seed,
        } => {
            let path = match (checkpoint, out) {
                (Some(c), _) => c,
                (None, Some(dir)) => dir.join(cli::CHECKPOINT_FILE),
                (None, None) => {
                    return Err(kanmixer::Error::Config("eval needs --checkpoint or --out".into()));
                }
            };
            cli::cmd_eval(&path, &config, &split, seed, &mut stdout)?;
        }
        Command::Ablate {
            grid,
            config,
            out,
            workers,
            horizons,
            seeds,
            seed,
        } => {
            let opts = AblateOptions {
                workers,
                horizons,
                seeds,
                seed,
            };
            cli::cmd_ablate(&grid, &config, &out, &opts, &mut stdout)?;
        }
        Command::Profile { config, seed } => {
            cli::cmd_profile(&config, seed, &mut stdout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
