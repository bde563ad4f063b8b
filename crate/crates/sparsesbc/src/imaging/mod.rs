//! Image representation, normalization, dataset ingestion, and image file I/O.
//!
//! Pixel data is stored channel-planar (channel-major, row-major within a
//! channel), the same layout as the CIFAR-10 binary records.

mod cifar;
mod ppm;

pub use cifar::{load_cifar10, write_cifar10_batch, Split};
pub use ppm::{read_image, write_image};

use crate::error::{Error, Result};

/// An image in the display domain: integer pixel values in 0..=255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    /// Builds an image from channel-planar pixel data.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Contract(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "pixel buffer length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// All-zero (black) image.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Image::new(height, width, channels, vec![0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Channel-planar pixel bytes.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[(channel * self.height + row) * self.width + col]
    }
}

/// An image in the model domain: real values in [0, 1], same layout as [`Image`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl NormalizedImage {
    /// Builds a normalized image, rejecting values outside [0, 1].
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "value buffer length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!(
                "normalized pixel value {v} outside [0, 1]"
            )));
        }
        Ok(NormalizedImage {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Maps display-domain pixels to the model domain: value = pixel / 255.
pub fn normalize(img: &Image) -> NormalizedImage {
    NormalizedImage {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: img.data.iter().map(|&p| f64::from(p) / 255.0).collect(),
    }
}

/// Restores display-domain pixels: pixel = round(clamp(v, 0, 1) * 255).
///
/// Decoder outputs may stray outside [0, 1]; this is the single clamp point,
/// so it accepts a raw value slice rather than a checked [`NormalizedImage`].
pub fn denormalize_values(
    height: usize,
    width: usize,
    channels: usize,
    values: &[f64],
) -> Result<Image> {
    let data = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Image::new(height, width, channels, data)
}

/// Restores display-domain pixels from a checked normalized image.
pub fn denormalize(img: &NormalizedImage) -> Image {
    denormalize_values(img.height, img.width, img.channels, &img.data)
        .expect("normalized image shape is valid by construction")
}

/// An ordered collection of labeled images sharing one shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub split: String,
    images: Vec<Image>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: impl Into<String>,
        images: Vec<Image>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            let shape = first.shape();
            if let Some(bad) = images.iter().find(|im| im.shape() != shape) {
                return Err(Error::Contract(format!(
                    "mixed shapes in dataset: {:?} vs {:?}",
                    shape,
                    bad.shape()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            split: split.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, index: usize) -> &Image {
        &self.images[index]
    }

    pub fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    /// Shape shared by every record, or `None` for an empty dataset.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| im.shape())
    }

    /// Keeps only the first `count` records.
    pub fn truncate(&mut self, count: usize) {
        self.images.truncate(count);
        self.labels.truncate(count);
    }
}
