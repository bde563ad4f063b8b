//! CIFAR-10 binary-version ingestion.
//!
//! Each record is 3073 bytes: one label byte followed by 3072 pixel bytes,
//! channel-major R,G,B, row-major within a channel.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Image};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 3073;
pub const IMAGE_DIM: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;

/// Which half of the corpus to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn batch_files(self) -> Vec<String> {
        match self {
            Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            Split::Test => vec!["test_batch.bin".to_string()],
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}, expected train or test"
            ))),
        }
    }
}

/// Loads CIFAR-10 binary batches.
///
/// `path` is either the batch directory (canonical layout) or a single
/// `.bin` file; in the latter case `split` only labels the result.
pub fn load_cifar10(path: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        split
            .batch_files()
            .into_iter()
            .map(|f| path.join(f))
            .collect()
    };

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in &files {
        read_batch(file, &mut images, &mut labels)?;
    }
    Dataset::new("cifar-10", split.as_str(), images, labels)
}

fn read_batch(path: &Path, images: &mut Vec<Image>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::format(path, "empty batch file"));
    }
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::format(
            path,
            format!(
                "file length {} is not a multiple of the {RECORD_BYTES}-byte record size",
                bytes.len()
            ),
        ));
    }
    for record in bytes.chunks_exact(RECORD_BYTES) {
        labels.push(record[0]);
        images.push(Image::new(
            IMAGE_DIM,
            IMAGE_DIM,
            IMAGE_CHANNELS,
            record[1..].to_vec(),
        )?);
    }
    Ok(())
}

/// Serializes `(label, image)` pairs into CIFAR-10 binary record format.
pub fn write_cifar10_batch(path: &Path, records: &[(u8, Image)]) -> Result<()> {
    let mut bytes = Vec::with_capacity(records.len() * RECORD_BYTES);
    for (label, image) in records {
        if image.shape() != (IMAGE_DIM, IMAGE_DIM, IMAGE_CHANNELS) {
            return Err(Error::Contract(format!(
                "CIFAR-10 records must be 32x32x3, got {:?}",
                image.shape()
            )));
        }
        bytes.push(*label);
        bytes.extend_from_slice(image.data());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
