//! Temporal-difference pre/post-processing for frame sequences.
//!
//! The first frame of each group is kept as a base (background); every
//! other frame is stored as its difference against the latest base. Signed
//! mode re-centers differences into [0, 1] and is exactly invertible;
//! absolute mode stores |difference| and loses sign on reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{denormalize_values, normalize, Image, NormalizedImage};

/// Number of frames per base by default.
pub const DEFAULT_GOP: usize = 12;

/// An ordered sequence of equally shaped frames.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Image>,
    /// Informational only; carried through untouched.
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Contract("frame sequence must be non-empty".into()));
        }
        let shape = frames[0].shape();
        if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
            return Err(Error::Contract(format!(
                "mixed frame shapes: {:?} vs {:?}",
                shape,
                bad.shape()
            )));
        }
        Ok(FrameSequence {
            frames,
            frame_rate: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }
}

/// How differences are encoded into the [0, 1] model domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// (frame - base + 1) / 2; exactly invertible.
    Signed,
    /// |frame - base|; sign is lost.
    Absolute,
}

impl DiffMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiffMode::Signed => "signed",
            DiffMode::Absolute => "absolute",
        }
    }
}

impl std::str::FromStr for DiffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(DiffMode::Signed),
            "absolute" => Ok(DiffMode::Absolute),
            other => Err(Error::Config(format!(
                "unknown diff mode {other:?}, expected signed or absolute"
            ))),
        }
    }
}

/// A frame of the differenced stream.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffFrame {
    Base(NormalizedImage),
    Diff(NormalizedImage),
}

impl DiffFrame {
    pub fn is_base(&self) -> bool {
        matches!(self, DiffFrame::Base(_))
    }

    pub fn image(&self) -> &NormalizedImage {
        match self {
            DiffFrame::Base(img) | DiffFrame::Diff(img) => img,
        }
    }
}

/// Base/differential decomposition of a frame sequence.
#[derive(Debug, Clone)]
pub struct DiffStream {
    pub entries: Vec<DiffFrame>,
    pub gop: usize,
    pub mode: DiffMode,
}

/// Decomposes frames into bases and differences against the latest base.
/// Frame 1 is a base, and a new base starts every `gop` frames.
pub fn temporal_difference(
    frames: &FrameSequence,
    gop: usize,
    mode: DiffMode,
) -> Result<DiffStream> {
    if gop < 2 {
        return Err(Error::Contract(format!("gop must be at least 2, got {gop}")));
    }
    let mut entries = Vec::with_capacity(frames.len());
    let mut base: Option<NormalizedImage> = None;
    for (idx, frame) in frames.frames().iter().enumerate() {
        let norm = normalize(frame);
        if idx % gop == 0 {
            entries.push(DiffFrame::Base(norm.clone()));
            base = Some(norm);
        } else {
            let base = base.as_ref().expect("base set at idx 0");
            let (h, w, c) = norm.shape();
            let data: Vec<f64> = norm
                .data()
                .iter()
                .zip(base.data())
                .map(|(f, b)| match mode {
                    DiffMode::Signed => (f - b + 1.0) / 2.0,
                    DiffMode::Absolute => (f - b).abs(),
                })
                .collect();
            entries.push(DiffFrame::Diff(NormalizedImage::new(h, w, c, data)?));
        }
    }
    Ok(DiffStream { entries, gop, mode })
}

/// Inverts the decomposition. The mode must match the one used to build the
/// stream; bases pass through, and each difference is applied to the latest
/// reconstructed base.
pub fn reconstruct_sequence(stream: &DiffStream, mode: DiffMode) -> Result<FrameSequence> {
    if mode != stream.mode {
        return Err(Error::Contract(format!(
            "stream was differenced in {} mode, reconstruction requested {}",
            stream.mode.as_str(),
            mode.as_str()
        )));
    }
    if stream.entries.is_empty() {
        return Err(Error::Contract("empty diff stream".into()));
    }
    if !stream.entries[0].is_base() {
        return Err(Error::Contract("first stream entry must be a base".into()));
    }
    let mut frames = Vec::with_capacity(stream.entries.len());
    let mut base: Option<&NormalizedImage> = None;
    for entry in &stream.entries {
        match entry {
            DiffFrame::Base(img) => {
                let (h, w, c) = img.shape();
                frames.push(denormalize_values(h, w, c, img.data())?);
                base = Some(img);
            }
            DiffFrame::Diff(diff) => {
                let base = base.expect("first entry is a base");
                let (h, w, c) = diff.shape();
                let values: Vec<f64> = diff
                    .data()
                    .iter()
                    .zip(base.data())
                    .map(|(d, b)| match mode {
                        DiffMode::Signed => b + (2.0 * d - 1.0),
                        DiffMode::Absolute => b + d,
                    })
                    .collect();
                frames.push(denormalize_values(h, w, c, &values)?);
            }
        }
    }
    FrameSequence::new(frames)
}
