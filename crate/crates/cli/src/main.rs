//! `r3d`: synthetic data, training, sampling, evaluation and radar
//! processing for residual radar diffusion.

mod commands;
mod config;
mod error;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use r3d::diffusion::TrainMode;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "r3d", version, about = "Residual radar diffusion toolkit")]
struct Cli {
    /// Run configuration (flat TOML); omitted keys use the defaults below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 forces the sequential path.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate paired synthetic scenes into <out>/train and <out>/test.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        /// Also export 8-bit PGM images of every pair.
        #[arg(long)]
        pgm: bool,
    },
    /// Train a denoiser; writes a checkpoint and a CSV log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// direct, residual or r3d.
        #[arg(long)]
        mode: TrainMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance radar BEVs with a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dump every sampler state as a multi-frame PGM.
        #[arg(long)]
        trajectory: bool,
    },
    /// Per-frame and mean CD / HD / F-score of predictions against targets.
    Eval {
        /// Directory of pairs whose input slot holds the prediction.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of pairs with the same file names holding the targets.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distribution statistics of residual, target and radar images.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a raw ADC frame with random point targets.
    RadarSimulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        targets: usize,
        /// Per-component noise standard deviation in ADC counts.
        #[arg(long, default_value_t = 4.0)]
        noise: f64,
    },
    /// Run the radar chain on a raw frame: BEV, polar image and points.
    RadarProcess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analytic-oracle test suites.
    Selftest,
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Synth { out, train, test, pgm } => commands::synth(&cfg, &out, train, test, pgm),
        Command::Train { data, mode, out } => commands::train_cmd(&cfg, &data, mode, &out),
        Command::Sample {
            checkpoint,
            data,
            out,
            trajectory,
        } => commands::sample(&cfg, &checkpoint, &data, &out, trajectory),
        Command::Eval { pred, truth, out } => commands::eval(&cfg, &pred, &truth, &out),
        Command::Stats { data, out } => commands::stats(&cfg, &data, &out),
        Command::RadarSimulate { out, targets, noise } => commands::radar_simulate(&cfg, &out, targets, noise),
        Command::RadarProcess { input, out } => commands::radar_process(&cfg, &input, &out),
        Command::Selftest => match selftest::run() {
            0 => Ok(()),
            n => Err(CliError::SelfTest(n).into()),
        },
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let help = format!(
        "Configuration keys and defaults:\n\n{}\nExit codes: 0 ok, 1 other, 2 usage, 3 io, 4 config, 5 format, \
         6 incompatible, 7 training, 8 sampler, 9 input, 10 selftest.",
        RunConfig::default().to_toml()
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error::render(&e));
            ExitCode::from(error::categorize(&e).exit_code())
        }
    }
}
