//! Simulated noisy channel: received = h * bits + noise.
//!
//! Bits are transmitted as real 0/1 symbols directly. Noise power is
//! calibrated per transmitted vector from the empirical mean of the squared
//! payload components, so SNR stays well-defined for sparse signals. AWGN
//! fixes h = 1; phase-invariant fading draws a real scalar h per vector
//! from a Rayleigh distribution scaled to E[h^2] = 1.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transceiver::{BitVector, ReceivedVector};

/// Channel model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Awgn,
    Pif,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Pif => "pif",
        }
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "pif" => Ok(ChannelKind::Pif),
            other => Err(Error::Config(format!(
                "unknown channel kind {other:?}, expected awgn or pif"
            ))),
        }
    }
}

/// Channel configuration: model, target SNR, and the noiseless override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    /// When set, no noise is added; transmit reduces to scaling by h.
    pub noiseless: bool,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Awgn,
            snr_db,
            noiseless: false,
        }
    }

    pub fn pif(snr_db: f64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Pif,
            snr_db,
            noiseless: false,
        }
    }

    pub fn noiseless(kind: ChannelKind) -> Self {
        ChannelConfig {
            kind,
            snr_db: f64::INFINITY,
            noiseless: true,
        }
    }
}

/// One realized transmission: gain and per-component noise deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub h: f64,
    pub noise_sigma: f64,
}

/// Noise deviation achieving `snr_db` against the given signal power:
/// sigma = sqrt(power / 10^(snr/10)).
pub fn noise_sigma_for_snr(signal_power: f64, snr_db: f64) -> Result<f64> {
    if signal_power < 0.0 {
        return Err(Error::Contract(format!(
            "signal power must be nonnegative, got {signal_power}"
        )));
    }
    Ok((signal_power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Draws the channel gain: 1 for AWGN (consuming no randomness), a
/// Rayleigh-distributed scalar with E[h^2] = 1 for PIF.
pub fn sample_fading(cfg: &ChannelConfig, rng: &mut impl Rng) -> f64 {
    match cfg.kind {
        ChannelKind::Awgn => 1.0,
        // Rayleigh magnitude of a unit complex Gaussian, scaled so that
        // E[h^2] = (E[z1^2] + E[z2^2]) / 2 = 1.
        ChannelKind::Pif => {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            (z1 * z1 + z2 * z2).sqrt() * std::f64::consts::FRAC_1_SQRT_2
        }
    }
}

/// Empirical mean of squared payload components (popcount / N for bits).
pub fn signal_power(bits: &BitVector) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    bits.popcount() as f64 / bits.len() as f64
}

/// Transmits a payload: received_i = h * bit_i + noise_i.
pub fn transmit(bits: &BitVector, cfg: &ChannelConfig, rng: &mut impl Rng) -> ReceivedVector {
    let h = sample_fading(cfg, rng);
    let power = signal_power(bits);
    if cfg.noiseless || power == 0.0 {
        // Degenerate vector (all zeros) has no defined SNR; transmit clean.
        return bits.bits().iter().map(|&b| h * f64::from(b)).collect();
    }
    let sigma = noise_sigma_for_snr(power, cfg.snr_db).expect("power >= 0");
    let noise = Normal::new(0.0, sigma).expect("sigma finite");
    bits.bits()
        .iter()
        .map(|&b| h * f64::from(b) + noise.sample(rng))
        .collect()
}
