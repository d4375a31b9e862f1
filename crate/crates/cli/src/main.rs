use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdavp::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "fdavp", version, about = "Mean function estimation and inference for discretely observed random functions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file (a directory for `bench`).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; all cores when unset.
    #[arg(long, env = "FDAVP_THREADS")]
    threads: Option<usize>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the mean function.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Confidence band and pointwise intervals.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output of `estimate`; required for Gaussian bands centred at the model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Hölder exponent and constant of the mean.
    Regularity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Replicated experiment with optional sweep.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common, data, model) = match cli.command {
        Cmd::Simulate { common } => (Command::Simulate, common, None, None),
        Cmd::Estimate { common, data } => (Command::Estimate, common, Some(data), None),
        Cmd::Infer { common, data, model } => (Command::Infer, common, Some(data), model),
        Cmd::Regularity { common, data } => (Command::Regularity, common, Some(data), None),
        Cmd::Bench { common } => (Command::Bench, common, None, None),
    };
    let opts = RunOptions {
        config: common.config,
        out: common.out,
        data,
        model,
        seed: common.seed,
        threads: common.threads,
    };
    match run(cmd, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fdavp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
