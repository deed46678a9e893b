//! `atat`: generate data, train, denoise and evaluate the AT-AT denoiser.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric divergence during training.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use atat_core::config::RunConfig;
use atat_core::CoreError;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "atat", version, about = "EMG artifact removal for single-channel EEG")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON config file (see README for the format).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Comma-separated SNR levels in dB, e.g. `-7,2`.
    #[arg(long, global = true, value_name = "LIST", allow_hyphen_values = true, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    /// Dataset root holding `train/` and `test/`.
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Train and evaluate without the adversarial stage.
    #[arg(long, global = true)]
    skip_gan: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build semi-synthetic train/test datasets under the data dir.
    Generate,
    /// Gate, then per-SNR autoencoders, then per-SNR adversarial stages.
    TrainAll,
    /// Per-SNR autoencoders only.
    TrainAe,
    /// Per-SNR adversarial stages on top of existing autoencoders.
    TrainGan {
        /// Run directory holding autoencoder checkpoints.
        #[arg(long, value_name = "DIR")]
        models: PathBuf,
    },
    /// The SNR gate only.
    TrainGate,
    /// Denoise a CSV of raw segments (one 512-sample segment per row).
    Denoise {
        #[arg(long, value_name = "DIR")]
        models: PathBuf,
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
    },
    /// Evaluate trained models on the test split and write a report.
    Eval {
        #[arg(long, value_name = "DIR")]
        models: PathBuf,
    },
}

fn resolve(g: &GlobalArgs) -> Result<RunConfig, CoreError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = &g.snr {
        cfg.snr_levels = snr.clone();
    }
    if let Some(d) = &g.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    cfg.skip_gan |= g.skip_gan;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Divergence(_)) => 3,
        Some(CoreError::InvalidConfig(_) | CoreError::Config(_)) => 1,
        Some(_) => 2,
        None => 2,
    }
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
    let result = resolve(&cli.global)
        .map_err(anyhow::Error::from)
        .and_then(|cfg| commands::run(&cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
