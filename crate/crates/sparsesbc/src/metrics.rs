//! Reconstruction quality and payload accounting.
//!
//! The semantic L1 loss lives in the normalized [0, 1] domain so rewards
//! stay near unit scale; PSNR and SSIM are computed on 0..255 integer
//! pixels with MAX = 255.

use crate::error::{Error, Result};
use crate::imaging::{Image, NormalizedImage};
use crate::transceiver::BitVector;

/// SSIM sliding-window side length.
pub const SSIM_WINDOW: usize = 8;

const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
const SSIM_C3: f64 = SSIM_C2 / 2.0;

/// Per-transmission quality summary.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub l1_loss: f64,
    pub full_loss: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sparsity_fraction: f64,
    pub payload_bytes: usize,
}

impl MetricReport {
    pub fn compute(
        original: &Image,
        reconstructed: &Image,
        bits: &BitVector,
        sparsity_weight: f64,
    ) -> Result<Self> {
        let orig_n = crate::imaging::normalize(original);
        let recon_n = crate::imaging::normalize(reconstructed);
        let l1 = l1_loss(&orig_n, &recon_n)?;
        Ok(MetricReport {
            l1_loss: l1,
            full_loss: l1 + sparsity_weight * bits.popcount() as f64,
            psnr_db: psnr(original, reconstructed)?,
            ssim: ssim(original, reconstructed)?,
            sparsity_fraction: sparsity_fraction(bits),
            payload_bytes: payload_bytes(bits),
        })
    }
}

fn check_shapes(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("shape mismatch: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Mean absolute difference with the 1/(2 d1 d2) normalization, averaged
/// over color channels. Zero iff the images are identical.
pub fn l1_loss(original: &NormalizedImage, reconstructed: &NormalizedImage) -> Result<f64> {
    check_shapes(original.shape(), reconstructed.shape())?;
    l1_loss_values(original, reconstructed.data())
}

/// Same as [`l1_loss`] against a raw value slice (decoder outputs that have
/// not been packaged into a [`NormalizedImage`]).
pub fn l1_loss_values(original: &NormalizedImage, reconstructed: &[f64]) -> Result<f64> {
    if reconstructed.len() != original.data().len() {
        return Err(Error::Contract(format!(
            "value count mismatch: {} vs {}",
            original.data().len(),
            reconstructed.len()
        )));
    }
    let sum: f64 = original
        .data()
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let (h, w, c) = original.shape();
    Ok(sum / (2.0 * h as f64 * w as f64 * c as f64))
}

/// L1 loss plus the sparsity penalty: `l1 + weight * popcount(bits)`.
pub fn full_loss(
    original: &NormalizedImage,
    reconstructed: &NormalizedImage,
    bits: &BitVector,
    sparsity_weight: f64,
) -> Result<f64> {
    Ok(l1_loss(original, reconstructed)? + sparsity_weight * bits.popcount() as f64)
}

/// Peak signal-to-noise ratio in dB over 0..255 pixels; identical images
/// return `f64::INFINITY`.
pub fn psnr(original: &Image, reconstructed: &Image) -> Result<f64> {
    check_shapes(original.shape(), reconstructed.shape())?;
    // Squared differences of u8 pixels fit exactly in integer accumulation.
    let sq_sum: u64 = original
        .data()
        .iter()
        .zip(reconstructed.data())
        .map(|(&a, &b)| {
            let d = i64::from(a) - i64::from(b);
            (d * d) as u64
        })
        .sum();
    if sq_sum == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sq_sum as f64 / original.data().len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Structural similarity with an 8x8 sliding window (stride 1, mean
/// pooling), standard stabilization constants, and unit exponents;
/// channels are scored independently and averaged. Clamped into [0, 1].
pub fn ssim(original: &Image, reconstructed: &Image) -> Result<f64> {
    ssim_with_params(original, reconstructed, SSIM_WINDOW, 1.0, 1.0, 1.0)
}

/// SSIM with explicit window size and luminance/contrast/structure
/// exponents.
pub fn ssim_with_params(
    original: &Image,
    reconstructed: &Image,
    window: usize,
    lambda_l: f64,
    lambda_c: f64,
    lambda_s: f64,
) -> Result<f64> {
    check_shapes(original.shape(), reconstructed.shape())?;
    let (h, w, c) = original.shape();
    if window == 0 || window > h || window > w {
        return Err(Error::Config(format!(
            "SSIM window {window} does not fit a {h}x{w} image"
        )));
    }

    let plane = h * w;
    let mut channel_sum = 0.0;
    for ch in 0..c {
        let x = &original.data()[ch * plane..(ch + 1) * plane];
        let y = &reconstructed.data()[ch * plane..(ch + 1) * plane];
        channel_sum += plane_ssim(x, y, h, w, window, lambda_l, lambda_c, lambda_s);
    }
    Ok((channel_sum / c as f64).clamp(0.0, 1.0))
}

/// Mean windowed SSIM of one channel, via summed-area tables.
#[allow(clippy::too_many_arguments)]
fn plane_ssim(
    x: &[u8],
    y: &[u8],
    h: usize,
    w: usize,
    win: usize,
    lambda_l: f64,
    lambda_c: f64,
    lambda_s: f64,
) -> f64 {
    // Summed-area tables of x, y, x^2, y^2, xy, each (h+1)x(w+1).
    let sw = w + 1;
    let mut sx = vec![0.0; (h + 1) * sw];
    let mut sy = vec![0.0; (h + 1) * sw];
    let mut sxx = vec![0.0; (h + 1) * sw];
    let mut syy = vec![0.0; (h + 1) * sw];
    let mut sxy = vec![0.0; (h + 1) * sw];
    for r in 0..h {
        for col in 0..w {
            let xv = f64::from(x[r * w + col]);
            let yv = f64::from(y[r * w + col]);
            let idx = (r + 1) * sw + col + 1;
            let up = r * sw + col + 1;
            let left = (r + 1) * sw + col;
            let diag = r * sw + col;
            sx[idx] = xv + sx[up] + sx[left] - sx[diag];
            sy[idx] = yv + sy[up] + sy[left] - sy[diag];
            sxx[idx] = xv * xv + sxx[up] + sxx[left] - sxx[diag];
            syy[idx] = yv * yv + syy[up] + syy[left] - syy[diag];
            sxy[idx] = xv * yv + sxy[up] + sxy[left] - sxy[diag];
        }
    }
    let window_sum = |table: &[f64], r: usize, col: usize| -> f64 {
        table[(r + win) * sw + col + win] + table[r * sw + col]
            - table[r * sw + col + win]
            - table[(r + win) * sw + col]
    };

    let count = (win * win) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r in 0..=(h - win) {
        for col in 0..=(w - win) {
            let mx = window_sum(&sx, r, col) / count;
            let my = window_sum(&sy, r, col) / count;
            let vx = (window_sum(&sxx, r, col) / count - mx * mx).max(0.0);
            let vy = (window_sum(&syy, r, col) / count - my * my).max(0.0);
            let cov = window_sum(&sxy, r, col) / count - mx * my;
            total += ssim_terms(mx, my, vx, vy, cov, lambda_l, lambda_c, lambda_s);
            windows += 1;
        }
    }
    total / windows as f64
}

#[allow(clippy::too_many_arguments)]
fn ssim_terms(
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cov: f64,
    lambda_l: f64,
    lambda_c: f64,
    lambda_s: f64,
) -> f64 {
    let (dx, dy) = (vx.sqrt(), vy.sqrt());
    let lum = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1);
    let con = (2.0 * dx * dy + SSIM_C2) / (vx + vy + SSIM_C2);
    let stru = (cov + SSIM_C3) / (dx * dy + SSIM_C3);
    powi_or_powf(lum, lambda_l) * powi_or_powf(con, lambda_c) * powi_or_powf(stru, lambda_s)
}

fn powi_or_powf(base: f64, exp: f64) -> f64 {
    if exp == 1.0 {
        base
    } else {
        base.powf(exp)
    }
}

/// Fraction of set bits in the payload.
pub fn sparsity_fraction(bits: &BitVector) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    bits.popcount() as f64 / bits.len() as f64
}

/// Bytes needed to carry the payload at one bit per component.
pub fn payload_bytes(bits: &BitVector) -> usize {
    payload_bytes_for_len(bits.len())
}

/// `ceil(n / 8)`.
pub fn payload_bytes_for_len(n_bits: usize) -> usize {
    n_bits.div_ceil(8)
}
