//! Command-line entry point: train, eval, video, and plot subcommands.
//!
//! Any flag of the form `--section.key value` (or `--section.key=value`)
//! overrides the matching config key, mirroring the flat config file;
//! trailing `key=value` arguments to `train` do the same.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparsesbc::channel::{ChannelConfig, ChannelKind};
use sparsesbc::config::ExperimentConfig;
use sparsesbc::error::{Error, Result};
use sparsesbc::imaging::Split;
use sparsesbc::runner;
use sparsesbc::video::{DiffMode, DEFAULT_GOP};

#[derive(Parser)]
#[command(name = "sparsesbc", version, about = "Sparse semantic communication for images and video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train transmitter and receiver alternately.
    Train {
        /// Flat key = value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory (same as run.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base RNG seed (same as run.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Disable channel noise (same as channel.noiseless=true).
        #[arg(long)]
        noiseless: bool,
        /// Trailing key=value config overrides.
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint over an SNR sweep.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CIFAR-10 batch directory or file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate only the first N images (0 = all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
        /// Comma-separated SNR points in dB.
        #[arg(long, default_value = "0,5,10,15,20")]
        snrs: String,
        /// Comma-separated channel kinds (awgn, pif).
        #[arg(long, default_value = "awgn")]
        channels: String,
        #[arg(long)]
        noiseless: bool,
        /// Also write per-image rows (for sparsity histograms).
        #[arg(long)]
        per_image: bool,
        #[arg(long, default_value = "eval_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Transmit a frame sequence with temporal differencing.
    Video {
        /// Directory of frame_%06d.{ppm,pgm,png} files.
        #[arg(long)]
        frames: PathBuf,
        /// Checkpoint to code frames with; omit for the identity transceiver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GOP)]
        gop: usize,
        #[arg(long, default_value = "signed")]
        mode: String,
        #[arg(long, default_value = "awgn")]
        channel: String,
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        #[arg(long)]
        noiseless: bool,
        #[arg(long, default_value = "video_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit plot-ready data files from run CSVs.
    Plot {
        /// snr_curves, sparsity_hist, or sigma_curves.
        #[arg(long)]
        kind: String,
        /// Input CSV paths (repeat or comma-separate).
        #[arg(long, value_delimiter = ',', required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

/// Splits dotted-key overrides (`--a.b v`, `--a.b=v`) out of the raw
/// arguments before clap sees them.
fn extract_dotted_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter().peekable();
    while let Some(arg) = iter.next() {
        if let Some(name) = arg.strip_prefix("--") {
            if name.contains('.') {
                if let Some((key, value)) = name.split_once('=') {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
                if let Some(value) = iter.peek() {
                    let value = value.clone();
                    iter.next();
                    overrides.push((name.to_string(), value));
                    continue;
                }
            }
        }
        rest.push(arg);
    }
    (rest, overrides)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry {part:?}")))
        })
        .collect()
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            out,
            seed,
            noiseless,
            overrides: trailing,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_file(&path)?,
                None => ExperimentConfig::default(),
            };
            for (key, value) in &overrides {
                cfg.set(key, value)?;
            }
            for pair in &trailing {
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("expected key=value override, got {pair:?}"))
                })?;
                cfg.set(key.trim(), value.trim())?;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if noiseless {
                cfg.channel.noiseless = true;
            }
            let outputs = runner::cmd_train(&cfg, resume.as_deref())?;
            println!(
                "trained {} epochs; metrics at {}, checkpoint at {}",
                outputs.epochs_run,
                outputs.metrics_csv.display(),
                outputs.final_checkpoint.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            limit,
            snrs,
            channels,
            noiseless,
            per_image,
            out,
            seed,
        } => {
            let args = runner::EvalArgs {
                checkpoint,
                dataset_path: data,
                split: split.parse::<Split>()?,
                limit,
                snrs_db: parse_list(&snrs, "snr")?,
                channels: parse_list::<ChannelKind>(&channels, "channel")?,
                noiseless,
                per_image,
                out_dir: out,
                seed,
            };
            let (summary, images) = runner::cmd_eval(&args)?;
            println!("eval rows written to {}", summary.display());
            if let Some(images) = images {
                println!("per-image rows written to {}", images.display());
            }
            Ok(())
        }
        Command::Video {
            frames,
            checkpoint,
            gop,
            mode,
            channel,
            snr_db,
            noiseless,
            out,
            seed,
        } => {
            let kind = channel.parse::<ChannelKind>()?;
            let channel = if noiseless {
                ChannelConfig::noiseless(kind)
            } else {
                ChannelConfig {
                    kind,
                    snr_db,
                    noiseless: false,
                }
            };
            let args = runner::VideoArgs {
                checkpoint,
                frames_dir: frames,
                gop,
                mode: mode.parse::<DiffMode>()?,
                channel,
                out_dir: out,
                seed,
            };
            let csv = runner::cmd_video(&args)?;
            println!("per-frame report written to {}", csv.display());
            Ok(())
        }
        Command::Plot { kind, csv, out } => {
            let outputs = runner::emit_plot_data(&csv, kind.parse()?, &out)?;
            for path in outputs {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = extract_dotted_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
