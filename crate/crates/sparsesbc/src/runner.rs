//! Experiment orchestration behind the CLI subcommands: training runs with
//! CSV logging and checkpoints, SNR sweeps, video transmission, and
//! plot-data emission.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::channel::{ChannelConfig, ChannelKind};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::imaging::{
    denormalize, load_cifar10, normalize, read_image, write_image, NormalizedImage, Split,
};
use crate::metrics::payload_bytes_for_len;
use crate::rng::{self, domain};
use crate::trainer::{
    evaluate_images, evaluate_images_detailed, metrics_csv_header, Trainer,
};
use crate::transceiver::{
    decode_trace, encode_trace, load_checkpoint, quantize, DecoderParams, EncoderParams,
};
use crate::video::{
    reconstruct_sequence, temporal_difference, DiffFrame, DiffMode, DiffStream, FrameSequence,
};

// ---------------------------------------------------------------------------
// Dataset / frame ingestion
// ---------------------------------------------------------------------------

/// Loads the configured dataset as normalized training samples. Frame
/// directories are run through temporal differencing first, so the model
/// trains on bases and differential images alike.
pub fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<NormalizedImage>> {
    match cfg.dataset_kind {
        DatasetKind::Cifar => {
            let mut dataset = load_cifar10(&cfg.dataset_path, cfg.dataset_split)?;
            if cfg.dataset_limit > 0 {
                dataset.truncate(cfg.dataset_limit);
            }
            Ok(dataset.images().iter().map(normalize).collect())
        }
        DatasetKind::Frames => {
            let frames = read_frame_dir(&cfg.dataset_path)?;
            let stream = temporal_difference(&frames, cfg.gop, cfg.diff_mode)?;
            let mut samples: Vec<NormalizedImage> =
                stream.entries.iter().map(|e| e.image().clone()).collect();
            if cfg.dataset_limit > 0 {
                samples.truncate(cfg.dataset_limit);
            }
            Ok(samples)
        }
    }
}

/// Reads `frame_*.{ppm,pgm,png}` files from a directory in name order.
pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            name.starts_with("frame_") && matches!(ext, "ppm" | "pgm" | "png")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no frame_* image files found"));
    }
    let frames = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Artifacts of a completed training run.
pub struct TrainOutputs {
    pub metrics_csv: PathBuf,
    pub final_checkpoint: PathBuf,
    pub epochs_run: usize,
}

/// Runs alternate training end to end: resolved-config echo, epoch CSV,
/// periodic checkpoints, and a final evaluation report on the test split.
/// On a training abort the last good state is saved to `abort.ssbc`
/// (updates are finiteness-checked before they apply, so the in-memory
/// state is always sane).
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutputs> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    // Full resolved configuration lands on disk before any training step.
    let resolved = cfg.out_dir.join("resolved.cfg");
    fs::write(&resolved, cfg.to_flat_string()).map_err(|e| Error::io(&resolved, e))?;
    println!("{}", cfg.run_header());

    let samples = load_samples(cfg)?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let t = Trainer::from_checkpoint(ckpt, cfg.channel, cfg.train.clone())?;
            crate::transceiver::ensure_arch(&t.enc.arch, &cfg.arch)?;
            t
        }
        None => Trainer::new(&cfg.arch, cfg.channel, cfg.train.clone())?,
    };

    let metrics_path = cfg.out_dir.join("metrics.csv");
    let timing_path = cfg.out_dir.join("timing.csv");
    let appending = resume.is_some() && metrics_path.exists();
    let mut metrics_file = fs::OpenOptions::new()
        .create(true)
        .append(appending)
        .write(true)
        .truncate(!appending)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut timing_file = fs::OpenOptions::new()
        .create(true)
        .append(appending)
        .write(true)
        .truncate(!appending)
        .open(&timing_path)
        .map_err(|e| Error::io(&timing_path, e))?;
    if !appending {
        writeln!(metrics_file, "{}", metrics_csv_header())
            .map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(timing_file, "epoch,wall_clock_s").map_err(|e| Error::io(&timing_path, e))?;
    }

    let interval = cfg.train.checkpoint_interval;
    let out_dir = cfg.out_dir.clone();
    let run_result = trainer.run(&samples, |record, trainer| {
        writeln!(metrics_file, "{}", record.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
        metrics_file.flush().map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(timing_file, "{},{:.3}", record.epoch, record.wall_clock_s)
            .map_err(|e| Error::io(&timing_path, e))?;
        if interval > 0 && record.epoch % interval == 0 {
            trainer.save(&out_dir.join(format!("ckpt_epoch_{:04}.ssbc", record.epoch)))?;
        }
        Ok(())
    });
    let records = match run_result {
        Ok(records) => records,
        Err(e) => {
            let abort = cfg.out_dir.join("abort.ssbc");
            let _ = trainer.save(&abort);
            eprintln!("training aborted; state saved to {}", abort.display());
            return Err(e);
        }
    };

    let final_ckpt = cfg.out_dir.join("final.ssbc");
    trainer.save(&final_ckpt)?;

    // Final evaluation report on the test split, when one exists.
    if cfg.dataset_kind == DatasetKind::Cifar {
        match load_cifar10(&cfg.dataset_path, Split::Test) {
            Ok(mut test) => {
                if cfg.dataset_limit > 0 {
                    test.truncate(cfg.dataset_limit);
                }
                let test_samples: Vec<NormalizedImage> =
                    test.images().iter().map(normalize).collect();
                let summary = evaluate_images(
                    &test_samples,
                    &trainer.enc,
                    &trainer.dec,
                    &cfg.channel,
                    cfg.train.seed,
                    0,
                )?;
                let report = cfg.out_dir.join("final_eval.csv");
                let mut rows = String::from(EVAL_CSV_HEADER);
                rows.push('\n');
                rows.push_str(&eval_csv_row(
                    &cfg.channel,
                    test_samples.len(),
                    summary.psnr_db,
                    summary.ssim,
                    summary.sparsity,
                    payload_bytes_for_len(cfg.arch.n_bits),
                ));
                rows.push('\n');
                fs::write(&report, rows).map_err(|e| Error::io(&report, e))?;
            }
            Err(_) => {
                eprintln!("no test split found under {}; skipping final report", cfg.dataset_path.display());
            }
        }
    }

    Ok(TrainOutputs {
        metrics_csv: metrics_path,
        final_checkpoint: final_ckpt,
        epochs_run: records.len(),
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub const EVAL_CSV_SCHEMA: &str = "sparsesbc.eval.v1";
const EVAL_CSV_HEADER: &str =
    "# schema: sparsesbc.eval.v1\nchannel,snr_db,noiseless,count,psnr_db,ssim,sparsity,payload_bytes";

fn eval_csv_row(
    channel: &ChannelConfig,
    count: usize,
    psnr_db: f64,
    ssim: f64,
    sparsity: f64,
    payload: usize,
) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        channel.kind.as_str(),
        channel.snr_db,
        channel.noiseless,
        count,
        psnr_db,
        ssim,
        sparsity,
        payload
    )
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset_path: PathBuf,
    pub split: Split,
    pub limit: usize,
    pub snrs_db: Vec<f64>,
    pub channels: Vec<ChannelKind>,
    pub noiseless: bool,
    pub per_image: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
}

/// Sweeps SNR points and channel kinds over a test set, one transmission
/// per image per point, and writes plot-ready mean rows (plus optional
/// per-image rows for sparsity histograms).
pub fn cmd_eval(args: &EvalArgs) -> Result<(PathBuf, Option<PathBuf>)> {
    let (enc, dec, meta, _) = load_checkpoint(&args.checkpoint)?;
    let mut dataset = load_cifar10(&args.dataset_path, args.split)?;
    if args.limit > 0 {
        dataset.truncate(args.limit);
    }
    if let Some(shape) = dataset.image_shape() {
        if shape != (meta.arch.height, meta.arch.width, meta.arch.channels) {
            return Err(Error::Checkpoint(format!(
                "dataset images are {:?} but the checkpoint architecture expects {:?}",
                shape,
                (meta.arch.height, meta.arch.width, meta.arch.channels)
            )));
        }
    }
    let samples: Vec<NormalizedImage> = dataset.images().iter().map(normalize).collect();
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;

    let configs: Vec<ChannelConfig> = if args.noiseless {
        args.channels.iter().map(|&k| ChannelConfig::noiseless(k)).collect()
    } else {
        args.channels
            .iter()
            .flat_map(|&kind| {
                args.snrs_db.iter().map(move |&snr_db| ChannelConfig {
                    kind,
                    snr_db,
                    noiseless: false,
                })
            })
            .collect()
    };

    let payload = payload_bytes_for_len(meta.arch.n_bits);
    let mut summary_rows = vec![EVAL_CSV_HEADER.to_string()];
    let mut image_rows = vec![
        "# schema: sparsesbc.eval-images.v1\nchannel,snr_db,noiseless,image,psnr_db,ssim,sparsity"
            .to_string(),
    ];
    for (row_idx, channel) in configs.iter().enumerate() {
        let details =
            evaluate_images_detailed(&samples, &enc, &dec, channel, args.seed, row_idx)?;
        let n = details.len().max(1) as f64;
        summary_rows.push(eval_csv_row(
            channel,
            details.len(),
            details.iter().map(|d| d.psnr_db).sum::<f64>() / n,
            details.iter().map(|d| d.ssim).sum::<f64>() / n,
            details.iter().map(|d| d.sparsity).sum::<f64>() / n,
            payload,
        ));
        if args.per_image {
            for (idx, d) in details.iter().enumerate() {
                image_rows.push(format!(
                    "{},{},{},{},{},{},{}",
                    channel.kind.as_str(),
                    channel.snr_db,
                    channel.noiseless,
                    idx,
                    d.psnr_db,
                    d.ssim,
                    d.sparsity
                ));
            }
        }
    }

    let summary_path = args.out_dir.join("eval.csv");
    fs::write(&summary_path, summary_rows.join("\n") + "\n")
        .map_err(|e| Error::io(&summary_path, e))?;
    let images_path = if args.per_image {
        let path = args.out_dir.join("eval_images.csv");
        fs::write(&path, image_rows.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        Some(path)
    } else {
        None
    };
    Ok((summary_path, images_path))
}

// ---------------------------------------------------------------------------
// video
// ---------------------------------------------------------------------------

pub struct VideoArgs {
    /// None = identity transceiver (no codec, no channel).
    pub checkpoint: Option<PathBuf>,
    pub frames_dir: PathBuf,
    pub gop: usize,
    pub mode: DiffMode,
    pub channel: ChannelConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

/// Temporal differencing, optional transmission of every base/diff frame
/// through the codec and channel, reconstruction, and a per-frame report.
pub fn cmd_video(args: &VideoArgs) -> Result<PathBuf> {
    let frames = read_frame_dir(&args.frames_dir)?;
    let stream = temporal_difference(&frames, args.gop, args.mode)?;

    let codec: Option<(EncoderParams, DecoderParams)> = match &args.checkpoint {
        Some(path) => {
            let (enc, dec, meta, _) = load_checkpoint(path)?;
            let shape = frames.frames()[0].shape();
            if shape != (meta.arch.height, meta.arch.width, meta.arch.channels) {
                return Err(Error::Checkpoint(format!(
                    "frames are {:?} but the checkpoint architecture expects {:?}",
                    shape,
                    (meta.arch.height, meta.arch.width, meta.arch.channels)
                )));
            }
            Some((enc, dec))
        }
        None => None,
    };

    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let decomp_dir = args.out_dir.join("decomp");
    let recon_dir = args.out_dir.join("recon");
    fs::create_dir_all(&decomp_dir).map_err(|e| Error::io(&decomp_dir, e))?;
    fs::create_dir_all(&recon_dir).map_err(|e| Error::io(&recon_dir, e))?;

    // Pass every entry through the codec (or leave untouched in identity
    // mode), tracking payload sparsity per frame.
    let mut coded_entries = Vec::with_capacity(stream.entries.len());
    let mut sparsities: Vec<Option<f64>> = Vec::with_capacity(stream.entries.len());
    for (idx, entry) in stream.entries.iter().enumerate() {
        let image = entry.image();
        let (decoded, sparsity) = match &codec {
            None => (image.clone(), None),
            Some((enc, dec)) => {
                let trace = encode_trace(image, enc)?;
                let bits = quantize(&trace.preact);
                let mut rng =
                    rng::stream(args.seed, domain::CHANNEL, &[u64::MAX, idx as u64]);
                let received = crate::channel::transmit(&bits, &args.channel, &mut rng);
                let dtrace = decode_trace(&received, dec)?;
                let (h, w, c) = image.shape();
                (
                    NormalizedImage::new(h, w, c, dtrace.output().to_vec())?,
                    Some(crate::metrics::sparsity_fraction(&bits)),
                )
            }
        };
        sparsities.push(sparsity);
        coded_entries.push(match entry {
            DiffFrame::Base(_) => DiffFrame::Base(decoded),
            DiffFrame::Diff(_) => DiffFrame::Diff(decoded),
        });

        // Decomposition images for inspection.
        let tag = if entry.is_base() { "base" } else { "diff" };
        let path = decomp_dir.join(format!("{tag}_{idx:06}.ppm"));
        write_image(&denormalize(image), &path)?;
    }
    let coded = DiffStream {
        entries: coded_entries,
        gop: stream.gop,
        mode: stream.mode,
    };
    let reconstructed = reconstruct_sequence(&coded, args.mode)?;

    let mut csv = vec![
        "# schema: sparsesbc.video.v1\nframe,kind,psnr_db,ssim,sparsity".to_string(),
    ];
    for (idx, (orig, recon)) in frames
        .frames()
        .iter()
        .zip(reconstructed.frames())
        .enumerate()
    {
        write_image(recon, &recon_dir.join(format!("frame_{idx:06}.ppm")))?;
        let window = crate::metrics::SSIM_WINDOW
            .min(orig.height())
            .min(orig.width());
        let kind = if stream.entries[idx].is_base() { "base" } else { "diff" };
        let sparsity = sparsities[idx].map_or(String::new(), |s| s.to_string());
        csv.push(format!(
            "{},{},{},{},{}",
            idx + 1,
            kind,
            crate::metrics::psnr(orig, recon)?,
            crate::metrics::ssim_with_params(orig, recon, window, 1.0, 1.0, 1.0)?,
            sparsity
        ));
    }
    let csv_path = args.out_dir.join("video.csv");
    fs::write(&csv_path, csv.join("\n") + "\n").map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// SNR-vs-PSNR/SSIM curves per channel kind, from an eval sweep.
    SnrCurves,
    /// Histogram of per-image payload sparsity.
    SparsityHist,
    /// Per-sigma-mode training reward curves.
    SigmaCurves,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_curves" => Ok(PlotKind::SnrCurves),
            "sparsity_hist" => Ok(PlotKind::SparsityHist),
            "sigma_curves" => Ok(PlotKind::SigmaCurves),
            other => Err(Error::Config(format!(
                "unknown plot kind {other:?}, expected snr_curves, sparsity_hist, or sigma_curves"
            ))),
        }
    }
}

struct CsvTable {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty CSV"))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let rows: Vec<Vec<String>> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
            .collect();
        if rows.is_empty() {
            return Err(Error::format(path, "CSV has no data rows"));
        }
        Ok(CsvTable { columns, rows })
    }

    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name:?}")))
    }
}

/// Writes plot-ready data files derived from run CSVs. Output is a pure
/// function of the inputs, so regeneration is byte-identical.
pub fn emit_plot_data(csvs: &[PathBuf], kind: PlotKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if csvs.is_empty() {
        return Err(Error::Config("at least one input CSV required".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match kind {
        PlotKind::SnrCurves => {
            let path = &csvs[0];
            let table = CsvTable::read(path)?;
            let (c_kind, c_snr) = (table.column(path, "channel")?, table.column(path, "snr_db")?);
            let (c_psnr, c_ssim) = (table.column(path, "psnr_db")?, table.column(path, "ssim")?);
            let mut kinds: Vec<String> = Vec::new();
            for row in &table.rows {
                if !kinds.contains(&row[c_kind]) {
                    kinds.push(row[c_kind].clone());
                }
            }
            let mut outputs = Vec::new();
            for channel in kinds {
                let mut points: Vec<(f64, &Vec<String>)> = table
                    .rows
                    .iter()
                    .filter(|r| r[c_kind] == channel)
                    .map(|r| (r[c_snr].parse::<f64>().unwrap_or(f64::NAN), r))
                    .collect();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut text = format!("# {channel}: snr_db psnr_db ssim\n");
                for (snr, row) in points {
                    let _ =
                        writeln!(text, "{snr} {} {}", row[c_psnr], row[c_ssim]);
                }
                let out = out_dir.join(format!("fig_snr_{channel}.dat"));
                fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
                outputs.push(out);
            }
            Ok(outputs)
        }
        PlotKind::SparsityHist => {
            let path = &csvs[0];
            let table = CsvTable::read(path)?;
            let c_sparsity = table.column(path, "sparsity")?;
            const BINS: usize = 20;
            let mut counts = [0usize; BINS];
            for row in &table.rows {
                if row[c_sparsity].is_empty() {
                    continue;
                }
                let v: f64 = row[c_sparsity]
                    .parse()
                    .map_err(|_| Error::format(path, "non-numeric sparsity"))?;
                let bin = ((v * BINS as f64) as usize).min(BINS - 1);
                counts[bin] += 1;
            }
            let mut text = String::from("# bin_lo bin_hi count\n");
            for (i, count) in counts.iter().enumerate() {
                let _ = writeln!(
                    text,
                    "{} {} {count}",
                    i as f64 / BINS as f64,
                    (i + 1) as f64 / BINS as f64
                );
            }
            let out = out_dir.join("fig_sparsity_hist.dat");
            fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
            Ok(vec![out])
        }
        PlotKind::SigmaCurves => {
            // Group rows from all inputs by sigma_mode; one curve per mode.
            let mut modes: Vec<String> = Vec::new();
            let mut series: std::collections::HashMap<String, Vec<(u64, String)>> =
                std::collections::HashMap::new();
            for path in csvs {
                let table = CsvTable::read(path)?;
                let c_epoch = table.column(path, "epoch")?;
                let c_mode = table.column(path, "sigma_mode")?;
                let c_reward = table.column(path, "reward_tx")?;
                for row in &table.rows {
                    let mode = row[c_mode].clone();
                    if !modes.contains(&mode) {
                        modes.push(mode.clone());
                    }
                    let epoch: u64 = row[c_epoch]
                        .parse()
                        .map_err(|_| Error::format(path, "non-numeric epoch"))?;
                    series
                        .entry(mode)
                        .or_default()
                        .push((epoch, row[c_reward].clone()));
                }
            }
            let mut outputs = Vec::new();
            for mode in modes {
                let mut points = series.remove(&mode).unwrap_or_default();
                points.sort_by_key(|(e, _)| *e);
                let mut text = format!("# {mode}: epoch reward_tx\n");
                for (epoch, reward) in points {
                    let _ = writeln!(text, "{epoch} {reward}");
                }
                let out = out_dir.join(format!("fig_sigma_{mode}.dat"));
                fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
                outputs.push(out);
            }
            Ok(outputs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{write_cifar10_batch, Image};
    use rand::Rng;

    fn synthetic_cifar_dir(count: usize, seed: u64) -> tempfile::TempDir {
        assert!(count >= 5, "need one record per batch file");
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng::stream(seed, "runner-test", &[]);
        let records: Vec<(u8, Image)> = (0..count)
            .map(|i| {
                let data = (0..3072).map(|_| rng.random::<u8>()).collect();
                ((i % 10) as u8, Image::new(32, 32, 3, data).unwrap())
            })
            .collect();
        for (i, chunk) in records.chunks(count.div_ceil(5)).enumerate() {
            write_cifar10_batch(&dir.path().join(format!("data_batch_{}.bin", i + 1)), chunk)
                .unwrap();
        }
        // Loader expects all five train batches.
        for i in records.chunks(count.div_ceil(5)).len() + 1..=5 {
            write_cifar10_batch(
                &dir.path().join(format!("data_batch_{i}.bin")),
                &records[..1],
            )
            .unwrap();
        }
        dir
    }

    fn tiny_experiment(data_dir: &Path, out_dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset_path = data_dir.to_path_buf();
        cfg.dataset_limit = 6;
        cfg.arch.conv_channels = vec![4];
        cfg.arch.n_bits = 32;
        cfg.train.batch_size = 3;
        cfg.train.epochs = 1;
        cfg.train.samples = 2;
        cfg.train.eval_count = 4;
        cfg.train.rx_mode = crate::trainer::RxMode::DirectBackprop;
        cfg.out_dir = out_dir.to_path_buf();
        cfg
    }

    #[test]
    fn train_writes_resolved_config_and_one_record_per_epoch() {
        let data = synthetic_cifar_dir(8, 1);
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(data.path(), out.path());
        let outputs = cmd_train(&cfg, None).unwrap();
        assert_eq!(outputs.epochs_run, 1);
        assert!(out.path().join("resolved.cfg").exists());
        assert!(outputs.final_checkpoint.exists());

        let csv = std::fs::read_to_string(&outputs.metrics_csv).unwrap();
        let data_rows: Vec<&str> = csv
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
            .collect();
        assert_eq!(data_rows.len(), 1);
    }

    #[test]
    fn train_is_byte_deterministic() {
        let data = synthetic_cifar_dir(8, 2);
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let cfg_a = tiny_experiment(data.path(), out_a.path());
        let cfg_b = tiny_experiment(data.path(), out_b.path());
        let a = cmd_train(&cfg_a, None).unwrap();
        let b = cmd_train(&cfg_b, None).unwrap();
        assert_eq!(
            std::fs::read(&a.metrics_csv).unwrap(),
            std::fs::read(&b.metrics_csv).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.final_checkpoint).unwrap(),
            std::fs::read(&b.final_checkpoint).unwrap()
        );
    }

    #[test]
    fn eval_sweep_writes_one_row_per_point() {
        let data = synthetic_cifar_dir(8, 3);
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(data.path(), out.path());
        let outputs = cmd_train(&cfg, None).unwrap();

        let eval_out = tempfile::tempdir().unwrap();
        let args = EvalArgs {
            checkpoint: outputs.final_checkpoint,
            dataset_path: data.path().to_path_buf(),
            split: Split::Train,
            limit: 4,
            snrs_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            channels: vec![ChannelKind::Awgn, ChannelKind::Pif],
            noiseless: false,
            per_image: true,
            out_dir: eval_out.path().to_path_buf(),
            seed: 1,
        };
        let (summary, images) = cmd_eval(&args).unwrap();
        let text = std::fs::read_to_string(&summary).unwrap();
        let rows: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("channel"))
            .collect();
        assert_eq!(rows.len(), 10);
        // Byte accounting column reads ceil(N/8) on every row.
        for row in rows {
            assert!(row.ends_with(",4"), "payload column wrong in {row}");
        }
        assert!(images.unwrap().exists());
    }

    #[test]
    fn noiseless_eval_is_a_ceiling_over_noisy_points() {
        let data = synthetic_cifar_dir(8, 21);
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(data.path(), out.path());
        let outputs = cmd_train(&cfg, None).unwrap();

        let parse_psnr = |path: &Path| -> Vec<f64> {
            std::fs::read_to_string(path)
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with('#') && !l.starts_with("channel"))
                .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
                .collect()
        };
        let eval_out = tempfile::tempdir().unwrap();
        let mut args = EvalArgs {
            checkpoint: outputs.final_checkpoint,
            dataset_path: data.path().to_path_buf(),
            split: Split::Train,
            limit: 6,
            snrs_db: vec![0.0, 10.0, 20.0],
            channels: vec![ChannelKind::Awgn],
            noiseless: false,
            per_image: false,
            out_dir: eval_out.path().to_path_buf(),
            seed: 3,
        };
        let (noisy_csv, _) = cmd_eval(&args).unwrap();
        let noisy = parse_psnr(&noisy_csv);

        let ceiling_out = tempfile::tempdir().unwrap();
        args.noiseless = true;
        args.out_dir = ceiling_out.path().to_path_buf();
        let (ceiling_csv, _) = cmd_eval(&args).unwrap();
        let ceiling = parse_psnr(&ceiling_csv)[0];

        for (i, point) in noisy.iter().enumerate() {
            assert!(
                ceiling >= *point,
                "noiseless ceiling {ceiling} below noisy point {i}: {point}"
            );
        }
    }

    #[test]
    fn eval_payload_column_reads_625_for_n5000() {
        // Narrow conv stack keeps the quantizer small while N stays 5000.
        let data = synthetic_cifar_dir(6, 22);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_experiment(data.path(), out.path());
        cfg.arch.conv_channels = vec![1];
        cfg.arch.n_bits = 5000;
        cfg.dataset_limit = 5;
        cfg.train.batch_size = 5;
        cfg.train.eval_count = 2;
        let outputs = cmd_train(&cfg, None).unwrap();

        let eval_out = tempfile::tempdir().unwrap();
        let args = EvalArgs {
            checkpoint: outputs.final_checkpoint,
            dataset_path: data.path().to_path_buf(),
            split: Split::Train,
            limit: 2,
            snrs_db: vec![10.0],
            channels: vec![ChannelKind::Awgn],
            noiseless: false,
            per_image: false,
            out_dir: eval_out.path().to_path_buf(),
            seed: 1,
        };
        let (csv, _) = cmd_eval(&args).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let row = text
            .lines()
            .find(|l| !l.starts_with('#') && !l.starts_with("channel"))
            .unwrap();
        assert!(row.ends_with(",625"), "payload column wrong: {row}");
    }

    #[test]
    fn trained_codec_keeps_diff_frames_sparser_than_bases() {
        // Mostly static clip: structured bases, tiny rectangle drift.
        let frames_dir = tempfile::tempdir().unwrap();
        let base = crate::imaging::normalize(&{
            let mut rng = rng::stream(23, "clip-base", &[]);
            Image::new(32, 32, 3, (0..3072).map(|_| rng.random::<u8>()).collect()).unwrap()
        });
        for i in 0..16usize {
            let mut values = base.data().to_vec();
            // A small moving bright square.
            for row in 4..8 {
                for col in (4 + i)..(8 + i).min(32) {
                    for ch in 0..3 {
                        values[(ch * 32 + row) * 32 + col] = 1.0;
                    }
                }
            }
            let img = crate::imaging::denormalize_values(32, 32, 3, &values).unwrap();
            write_image(&img, &frames_dir.path().join(format!("frame_{i:06}.ppm"))).unwrap();
        }

        // Train briefly on the differenced clip itself (frames mode).
        let out = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.dataset_kind = DatasetKind::Frames;
        cfg.dataset_path = frames_dir.path().to_path_buf();
        cfg.arch.conv_channels = vec![4];
        cfg.arch.n_bits = 64;
        cfg.train.batch_size = 8;
        cfg.train.epochs = 6;
        cfg.train.samples = 2;
        cfg.train.eval_count = 4;
        cfg.train.sparsity_weight = 0.05;
        cfg.train.rx_mode = crate::trainer::RxMode::DirectBackprop;
        cfg.train.optimizer = crate::nn::OptimizerKind::Adam;
        cfg.train.learning_rate = 1e-3;
        cfg.train.seed = 23;
        cfg.out_dir = out.path().to_path_buf();
        let outputs = cmd_train(&cfg, None).unwrap();

        let video_out = tempfile::tempdir().unwrap();
        let args = VideoArgs {
            checkpoint: Some(outputs.final_checkpoint),
            frames_dir: frames_dir.path().to_path_buf(),
            gop: 12,
            mode: DiffMode::Signed,
            channel: ChannelConfig::noiseless(ChannelKind::Awgn),
            out_dir: video_out.path().to_path_buf(),
            seed: 23,
        };
        let csv_path = cmd_video(&args).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let sparsity_of = |kind: &str| -> f64 {
            let values: Vec<f64> = text
                .lines()
                .filter(|l| l.contains(&format!(",{kind},")))
                .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
                .collect();
            values.iter().sum::<f64>() / values.len() as f64
        };
        let diff = sparsity_of("diff");
        let base_s = sparsity_of("base");
        assert!(
            diff <= base_s,
            "diff-frame sparsity {diff} should not exceed base-frame sparsity {base_s}"
        );
    }

    #[test]
    fn plot_emission_is_deterministic_and_validates_columns() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("metrics.csv");
        std::fs::write(
            &csv,
            format!(
                "{}\n1,constant,0.5,0.6,0.1,20,0.8,0.3,0.1,0.1,0.1\n2,constant,0.6,0.7,0.09,21,0.81,0.29,0.1,0.1,0.1\n",
                metrics_csv_header()
            ),
        )
        .unwrap();
        let out_a = dir.path().join("plots_a");
        let out_b = dir.path().join("plots_b");
        let a = emit_plot_data(&[csv.clone()], PlotKind::SigmaCurves, &out_a).unwrap();
        let b = emit_plot_data(&[csv.clone()], PlotKind::SigmaCurves, &out_b).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(
            std::fs::read(&a[0]).unwrap(),
            std::fs::read(&b[0]).unwrap()
        );

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            emit_plot_data(&[empty], PlotKind::SigmaCurves, &out_a),
            Err(Error::Format { .. })
        ));

        let wrong = dir.path().join("wrong.csv");
        std::fs::write(&wrong, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            emit_plot_data(&[wrong], PlotKind::SigmaCurves, &out_a),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn video_identity_round_trip_with_gop_bases() {
        let frames_dir = tempfile::tempdir().unwrap();
        let mut rng = rng::stream(9, "video-frames", &[]);
        let mut originals = Vec::new();
        for i in 0..25 {
            let img = Image::new(8, 8, 3, (0..192).map(|_| rng.random::<u8>()).collect()).unwrap();
            write_image(&img, &frames_dir.path().join(format!("frame_{i:06}.ppm"))).unwrap();
            originals.push(img);
        }
        let out = tempfile::tempdir().unwrap();
        let args = VideoArgs {
            checkpoint: None,
            frames_dir: frames_dir.path().to_path_buf(),
            gop: 12,
            mode: DiffMode::Signed,
            channel: ChannelConfig::noiseless(ChannelKind::Awgn),
            out_dir: out.path().to_path_buf(),
            seed: 0,
        };
        let csv_path = cmd_video(&args).unwrap();

        // Bit-exact reconstruction of every frame.
        for (i, orig) in originals.iter().enumerate() {
            let recon = read_image(&out.path().join("recon").join(format!("frame_{i:06}.ppm")))
                .unwrap();
            assert_eq!(&recon, orig, "frame {i}");
        }
        // Bases logged at frames 1, 13, 25 for gop 12.
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let bases: Vec<u32> = text
            .lines()
            .filter(|l| l.contains(",base,"))
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(bases, vec![1, 13, 25]);
    }
}
