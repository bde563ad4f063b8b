//! Lossless image file I/O: PPM (P6) / PGM (P5), plus PNG behind the same
//! interface for convenience. Format is chosen by file extension on write
//! and by magic bytes on read; `.ppm` covers both P5 and P6.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Reads an image file (PPM P6/P5, or PNG when built with PNG support).
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.first() {
        Some(b'P') => decode_pnm(path, &bytes),
        Some(0x89) => decode_png(path, &bytes),
        _ => Err(Error::format(path, "unrecognized image magic")),
    }
}

/// Writes an image losslessly; 3-channel images become P6, 1-channel P5.
/// A `.png` extension selects PNG instead.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let bytes = if ext == "png" {
        encode_png(path, img)?
    } else {
        encode_pnm(img)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&interleave(img));
    out
}

/// Planar (C,H,W) to pixel-interleaved scanlines.
fn interleave(img: &Image) -> Vec<u8> {
    let (h, w, c) = img.shape();
    let mut out = Vec::with_capacity(h * w * c);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                out.push(img.pixel(ch, row, col));
            }
        }
    }
    out
}

/// Pixel-interleaved scanlines to planar (C,H,W).
fn deinterleave(h: usize, w: usize, c: usize, raster: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; h * w * c];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                out[(ch * h + row) * w + col] = raster[(row * w + col) * c + ch];
            }
        }
    }
    out
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let channels = match &bytes[..2.min(bytes.len())] {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(Error::format(path, "expected P5 or P6 magic")),
    };

    // Header: magic, width, height, maxval, each separated by whitespace;
    // '#' starts a comment running to end of line.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        pos = skip_pnm_separators(bytes, pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::format(path, "malformed header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text
            .parse()
            .map_err(|_| Error::format(path, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("only 8-bit depth supported, maxval = {maxval}"),
        ));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing whitespace after maxval"));
    }
    pos += 1;

    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    Image::new(
        height,
        width,
        channels,
        deinterleave(height, width, channels, &payload[..expected]),
    )
}

fn skip_pnm_separators(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("png decode: {e}")))?;
    match decoded {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            Image::new(h, w, 1, gray.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Image::new(h, w, 3, deinterleave(h, w, 3, rgb.as_raw()))
        }
    }
}

fn encode_png(path: &Path, img: &Image) -> Result<Vec<u8>> {
    let (h, w, c) = img.shape();
    let raster = interleave(img);
    let mut out = std::io::Cursor::new(Vec::new());
    let color = if c == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::write_buffer_with_format(
        &mut out,
        &raster,
        w as u32,
        h as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::format(path, format!("png encode: {e}")))?;
    Ok(out.into_inner())
}
