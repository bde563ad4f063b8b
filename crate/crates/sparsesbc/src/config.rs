//! Experiment configuration: a flat `key = value` text format with dotted
//! section keys, overridable one key at a time from the command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::imaging::Split;
use crate::trainer::TrainConfig;
use crate::transceiver::ArchConfig;
use crate::video::{DiffMode, DEFAULT_GOP};

/// Environment variable supplying the default output root.
pub const OUT_ROOT_ENV: &str = "SPARSESBC_OUT";

/// What the dataset path points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// CIFAR-10 binary batches.
    Cifar,
    /// A directory of frame_%06d image files, consumed through temporal
    /// differencing before training.
    Frames,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Cifar => "cifar",
            DatasetKind::Frames => "frames",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar" => Ok(DatasetKind::Cifar),
            "frames" => Ok(DatasetKind::Frames),
            other => Err(Error::Config(format!(
                "unknown dataset kind {other:?}, expected cifar or frames"
            ))),
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset_kind: DatasetKind,
    pub dataset_path: PathBuf,
    pub dataset_split: Split,
    /// Keep only the first N records (0 = all).
    pub dataset_limit: usize,
    pub arch: ArchConfig,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub gop: usize,
    pub diff_mode: DiffMode,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let out_root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "runs".to_string());
        ExperimentConfig {
            dataset_kind: DatasetKind::Cifar,
            dataset_path: PathBuf::from("data/cifar-10-batches-bin"),
            dataset_split: Split::Train,
            dataset_limit: 0,
            arch: ArchConfig::cifar_default(),
            channel: ChannelConfig::awgn(10.0),
            train: TrainConfig::default(),
            gop: DEFAULT_GOP,
            diff_mode: DiffMode::Signed,
            out_dir: PathBuf::from(out_root),
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one dotted-key override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
        };
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
            }
        };
        match key {
            "dataset.kind" => self.dataset_kind = value.parse()?,
            "dataset.path" => self.dataset_path = PathBuf::from(value),
            "dataset.split" => self.dataset_split = value.parse()?,
            "dataset.limit" => self.dataset_limit = parse_usize(value)?,
            "arch.height" => self.arch.height = parse_usize(value)?,
            "arch.width" => self.arch.width = parse_usize(value)?,
            "arch.channels" => self.arch.channels = parse_usize(value)?,
            "arch.conv_channels" => {
                self.arch.conv_channels = value
                    .split(',')
                    .map(|part| {
                        part.trim().parse::<usize>().map_err(|_| {
                            Error::Config(format!("{key}: bad channel width {part:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "arch.n_bits" => self.arch.n_bits = parse_usize(value)?,
            "channel.kind" => self.channel.kind = value.parse()?,
            "channel.snr_db" => self.channel.snr_db = parse_f64(value)?,
            "channel.noiseless" => self.channel.noiseless = parse_bool(value)?,
            "train.batch_size" => self.train.batch_size = parse_usize(value)?,
            "train.learning_rate" => self.train.learning_rate = parse_f64(value)?,
            "train.samples" => self.train.samples = parse_usize(value)?,
            "train.epochs" => self.train.epochs = parse_usize(value)?,
            "train.sparsity_weight" => self.train.sparsity_weight = parse_f64(value)?,
            "train.sigma_mode" => self.train.sigma_mode = value.parse()?,
            "train.sigma0" => self.train.sigma0 = parse_f64(value)?,
            "train.rx_mode" => self.train.rx_mode = value.parse()?,
            "train.optimizer" => {
                self.train.optimizer = value.parse().map_err(Error::Config)?;
            }
            "train.tx_optimizer" => {
                self.train.tx_optimizer = if value.is_empty() {
                    None
                } else {
                    Some(value.parse().map_err(Error::Config)?)
                };
            }
            "train.tx_learning_rate" => {
                self.train.tx_learning_rate = if value.is_empty() {
                    None
                } else {
                    Some(parse_f64(value)?)
                };
            }
            "train.checkpoint_interval" => self.train.checkpoint_interval = parse_usize(value)?,
            "train.eval_count" => self.train.eval_count = parse_usize(value)?,
            "video.gop" => self.gop = parse_usize(value)?,
            "video.mode" => self.diff_mode = value.parse()?,
            "run.seed" => {
                self.train.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("run.seed: expected an integer, got {value:?}")))?;
            }
            "run.out" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// The fully resolved flat-format text, defaults included. Written into
    /// the output directory before any training step.
    pub fn to_flat_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# sparsesbc resolved configuration");
        let _ = writeln!(
            s,
            "# snr calibration: per-vector empirical mean of squared payload components"
        );
        let _ = writeln!(s, "# derived embedding length M = {}", self.arch.embedding_len());
        let _ = writeln!(s, "dataset.kind = {}", self.dataset_kind.as_str());
        let _ = writeln!(s, "dataset.path = {}", self.dataset_path.display());
        let _ = writeln!(s, "dataset.split = {}", self.dataset_split.as_str());
        let _ = writeln!(s, "dataset.limit = {}", self.dataset_limit);
        let _ = writeln!(s, "arch.height = {}", self.arch.height);
        let _ = writeln!(s, "arch.width = {}", self.arch.width);
        let _ = writeln!(s, "arch.channels = {}", self.arch.channels);
        let _ = writeln!(
            s,
            "arch.conv_channels = {}",
            self.arch
                .conv_channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "arch.n_bits = {}", self.arch.n_bits);
        let _ = writeln!(s, "channel.kind = {}", self.channel.kind.as_str());
        let _ = writeln!(s, "channel.snr_db = {}", self.channel.snr_db);
        let _ = writeln!(s, "channel.noiseless = {}", self.channel.noiseless);
        let _ = writeln!(s, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "train.learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(s, "train.samples = {}", self.train.samples);
        let _ = writeln!(s, "train.epochs = {}", self.train.epochs);
        let _ = writeln!(s, "train.sparsity_weight = {}", self.train.sparsity_weight);
        let _ = writeln!(s, "train.sigma_mode = {}", self.train.sigma_mode.as_str());
        let _ = writeln!(s, "train.sigma0 = {}", self.train.sigma0);
        let _ = writeln!(s, "train.rx_mode = {}", self.train.rx_mode.as_str());
        let _ = writeln!(s, "train.optimizer = {}", self.train.optimizer.as_str());
        let _ = writeln!(
            s,
            "train.tx_optimizer = {}",
            self.train.tx_optimizer.map(|k| k.as_str()).unwrap_or("")
        );
        let _ = writeln!(
            s,
            "train.tx_learning_rate = {}",
            self.train
                .tx_learning_rate
                .map(|v| v.to_string())
                .unwrap_or_default()
        );
        let _ = writeln!(s, "train.checkpoint_interval = {}", self.train.checkpoint_interval);
        let _ = writeln!(s, "train.eval_count = {}", self.train.eval_count);
        let _ = writeln!(s, "video.gop = {}", self.gop);
        let _ = writeln!(s, "video.mode = {}", self.diff_mode.as_str());
        let _ = writeln!(s, "run.seed = {}", self.train.seed);
        let _ = writeln!(s, "run.out = {}", self.out_dir.display());
        s
    }

    /// One-line summary of the key settings, printed at run start.
    pub fn run_header(&self) -> String {
        format!(
            "sparsesbc | T={} alpha={} epsilon={} N={} M={} m={} sigma={} sigma_mode={} E={} channel={}@{}dB rx={} opt={} seed={}",
            self.train.batch_size,
            self.train.learning_rate,
            self.train.sparsity_weight,
            self.arch.n_bits,
            self.arch.embedding_len(),
            self.train.samples,
            self.train.sigma0,
            self.train.sigma_mode.as_str(),
            self.train.epochs,
            self.channel.kind.as_str(),
            self.channel.snr_db,
            self.train.rx_mode.as_str(),
            self.train.optimizer.as_str(),
            self.train.seed,
        )
    }

    /// Structural validation plus existence of referenced paths.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.gop < 2 {
            return Err(Error::Config(format!("video.gop must be at least 2, got {}", self.gop)));
        }
        if !self.dataset_path.exists() {
            return Err(Error::Config(format!(
                "dataset path {} does not exist",
                self.dataset_path.display()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;
    use crate::nn::OptimizerKind;
    use crate::trainer::{RxMode, SigmaMode};

    #[test]
    fn defaults_mirror_published_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.sparsity_weight, 0.1);
        assert_eq!(cfg.arch.n_bits, 5000);
        assert_eq!(cfg.arch.embedding_len(), 2304);
        assert_eq!(cfg.train.samples, 5);
        assert_eq!(cfg.train.sigma0, 0.1);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.gop, 12);
    }

    #[test]
    fn run_header_echoes_published_settings() {
        let header = ExperimentConfig::default().run_header();
        for needle in [
            "T=64",
            "alpha=0.0001",
            "epsilon=0.1",
            "N=5000",
            "M=2304",
            "m=5",
            "sigma=0.1",
            "E=200",
        ] {
            assert!(header.contains(needle), "missing {needle} in {header}");
        }
    }

    #[test]
    fn file_round_trip_preserves_settings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        let mut cfg = ExperimentConfig::default();
        cfg.set("channel.kind", "pif").unwrap();
        cfg.set("channel.snr_db", "7.5").unwrap();
        cfg.set("train.sigma_mode", "annealed").unwrap();
        cfg.set("arch.conv_channels", "16,32,36").unwrap();
        cfg.set("arch.n_bits", "1000").unwrap();
        cfg.set("run.seed", "99").unwrap();
        std::fs::write(&path, cfg.to_flat_string()).unwrap();

        let loaded = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(loaded.channel.kind, ChannelKind::Pif);
        assert_eq!(loaded.channel.snr_db, 7.5);
        assert_eq!(loaded.train.sigma_mode, SigmaMode::Annealed);
        assert_eq!(loaded.arch.conv_channels, vec![16, 32, 36]);
        assert_eq!(loaded.arch.embedding_len(), 576);
        assert_eq!(loaded.train.seed, 99);
        assert_eq!(loaded.to_flat_string(), cfg.to_flat_string());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(
            cfg.set("train.batchsize", "64"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "# comment\n\ntrain.epochs = 7\n").unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.train.epochs, 7);
    }

    #[test]
    fn missing_dataset_path_fails_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset_path = PathBuf::from("/definitely/not/here");
        cfg.train.epochs = 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rx_mode_default_is_self_critic() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.train.rx_mode, RxMode::SelfCritic);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Sgd);
    }
}
