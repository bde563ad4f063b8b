//! Alternate transmitter/receiver training with the self-critic Gaussian
//! policy gradient.
//!
//! No gradient ever flows through the quantizer, the channel, or the frozen
//! peer model. The transmitter explores by perturbing the continuous
//! pre-quantization activation with Gaussian noise, re-binarizing each
//! sample for transmission; rewards come back from forward passes only, and
//! the log-density gradient `(sample - mean) / sigma^2` weighted by
//! leave-one-out advantages drives the update. The receiver trains either
//! the same way over pixel space or by direct backpropagation (the channel
//! precedes its gradient path, so both are valid).

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit, ChannelConfig};
use crate::error::{Error, Result};
use crate::imaging::NormalizedImage;
use crate::metrics::{l1_loss, l1_loss_values};
use crate::nn::{sigmoid, Optimizer, OptimizerKind};
use crate::rng::{self, domain};
use crate::transceiver::{
    decode_trace, decoder_backward, dequantize, encode_trace, encoder_backward, quantize,
    BitVector, DecoderGrads, DecoderParams, DecoderTrace, EncoderGrads, EncoderParams,
    EncoderTrace,
};

/// Fixed number of accumulation chunks so gradient summation order (and
/// therefore every f64 rounding) is independent of thread scheduling.
const GRAD_CHUNKS: usize = 8;

const PHASE_TX: u64 = 0;
const PHASE_RX: u64 = 1;

/// Exploration scale policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Constant,
    Annealed,
    Learnable,
}

impl SigmaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaMode::Constant => "constant",
            SigmaMode::Annealed => "annealed",
            SigmaMode::Learnable => "learnable",
        }
    }
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SigmaMode::Constant),
            "annealed" => Ok(SigmaMode::Annealed),
            "learnable" => Ok(SigmaMode::Learnable),
            other => Err(Error::Config(format!(
                "unknown sigma mode {other:?}, expected constant, annealed, or learnable"
            ))),
        }
    }
}

/// How the receiver is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxMode {
    SelfCritic,
    DirectBackprop,
}

impl RxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RxMode::SelfCritic => "self_critic",
            RxMode::DirectBackprop => "direct_backprop",
        }
    }
}

impl std::str::FromStr for RxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_critic" => Ok(RxMode::SelfCritic),
            "direct_backprop" => Ok(RxMode::DirectBackprop),
            other => Err(Error::Config(format!(
                "unknown rx mode {other:?}, expected self_critic or direct_backprop"
            ))),
        }
    }
}

/// All training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Batch size T.
    pub batch_size: usize,
    /// Learning rate alpha.
    pub learning_rate: f64,
    /// Self-critic samples m.
    pub samples: usize,
    /// Epochs E.
    pub epochs: usize,
    /// Sparsity weight epsilon.
    pub sparsity_weight: f64,
    pub sigma_mode: SigmaMode,
    /// Initial scale factor sigma.
    pub sigma0: f64,
    pub rx_mode: RxMode,
    pub optimizer: OptimizerKind,
    /// Transmitter-side override of the optimizer (defaults to `optimizer`).
    pub tx_optimizer: Option<OptimizerKind>,
    /// Transmitter-side override of the learning rate.
    pub tx_learning_rate: Option<f64>,
    pub seed: u64,
    /// Checkpoint every this many epochs (0 = final checkpoint only).
    pub checkpoint_interval: usize,
    /// Training-subset size used for per-epoch PSNR/SSIM records.
    pub eval_count: usize,
}

impl Default for TrainConfig {
    /// Published simulation settings: T=64, alpha=1e-4, m=5, E=200,
    /// epsilon=0.1, sigma=0.1.
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            samples: 5,
            epochs: 200,
            sparsity_weight: 0.1,
            sigma_mode: SigmaMode::Constant,
            sigma0: 0.1,
            rx_mode: RxMode::SelfCritic,
            optimizer: OptimizerKind::Sgd,
            tx_optimizer: None,
            tx_learning_rate: None,
            seed: 0,
            checkpoint_interval: 0,
            eval_count: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!(
                "self-critic needs at least 2 samples for the leave-one-out baseline, got {}",
                self.samples
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let Some(lr) = self.tx_learning_rate {
            if !(lr > 0.0) {
                return Err(Error::Config("tx learning rate must be positive".into()));
            }
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        if self.sparsity_weight < 0.0 {
            return Err(Error::Config("sparsity weight must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn tx_optimizer_kind(&self) -> OptimizerKind {
        self.tx_optimizer.unwrap_or(self.optimizer)
    }

    pub fn tx_lr(&self) -> f64 {
        self.tx_learning_rate.unwrap_or(self.learning_rate)
    }
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

/// Transmitter reward: 1 - (L1 loss + epsilon * popcount). Equation-level
/// identity: reward_tx = 1 - full_loss.
pub fn reward_tx(
    original: &NormalizedImage,
    reconstructed: &NormalizedImage,
    bits: &BitVector,
    sparsity_weight: f64,
) -> Result<f64> {
    Ok(reward_tx_values(
        original,
        reconstructed.data(),
        bits,
        sparsity_weight,
    )?)
}

/// [`reward_tx`] against raw decoder outputs.
pub fn reward_tx_values(
    original: &NormalizedImage,
    reconstructed: &[f64],
    bits: &BitVector,
    sparsity_weight: f64,
) -> Result<f64> {
    let l1 = l1_loss_values(original, reconstructed)?;
    Ok(1.0 - l1 - sparsity_weight * bits.popcount() as f64)
}

/// Receiver reward: 1 - L1 loss. Bounded above by 1, with equality iff the
/// reconstruction is exact.
pub fn reward_rx(original: &NormalizedImage, reconstructed: &NormalizedImage) -> Result<f64> {
    Ok(1.0 - l1_loss(original, reconstructed)?)
}

// ---------------------------------------------------------------------------
// Sigma schedule
// ---------------------------------------------------------------------------

/// Exploration scale schedule over epochs.
#[derive(Debug, Clone, Copy)]
pub struct SigmaSchedule {
    pub mode: SigmaMode,
    pub sigma0: f64,
}

/// Per-transmission exploration scale: one scalar or one value per component.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaVector {
    Scalar(f64),
    PerComponent(Vec<f64>),
}

impl SigmaVector {
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self {
            SigmaVector::Scalar(s) => *s,
            SigmaVector::PerComponent(v) => v[i],
        }
    }

    /// (min, mean, max) over components.
    pub fn summary(&self, len: usize) -> (f64, f64, f64) {
        match self {
            SigmaVector::Scalar(s) => (*s, *s, *s),
            SigmaVector::PerComponent(v) => {
                let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mean = v.iter().sum::<f64>() / len as f64;
                (min, mean, max)
            }
        }
    }
}

/// Scale for the given 1-based epoch.
///
/// Constant: sigma0 everywhere. Annealed: linear decay from sigma0 at epoch
/// 1 to sigma0/10 at the final epoch. Learnable: sigmoid of each
/// pre-quantization activation component, hence always in (0, 1).
pub fn sigma_value(
    schedule: &SigmaSchedule,
    epoch: usize,
    total_epochs: usize,
    preact: &[f64],
) -> SigmaVector {
    match schedule.mode {
        SigmaMode::Constant => SigmaVector::Scalar(schedule.sigma0),
        SigmaMode::Annealed => {
            let fraction = if total_epochs <= 1 {
                0.0
            } else {
                (epoch.saturating_sub(1)) as f64 / (total_epochs - 1) as f64
            };
            SigmaVector::Scalar(schedule.sigma0 * (1.0 - 0.9 * fraction))
        }
        SigmaMode::Learnable => {
            SigmaVector::PerComponent(preact.iter().map(|&a| sigmoid(a)).collect())
        }
    }
}

/// Scalar exploration deviation for the receiver's pixel-space policy.
/// The learnable mode is defined on transmitter activations, so the
/// receiver falls back to sigma0 there.
pub fn rx_sigma(schedule: &SigmaSchedule, epoch: usize, total_epochs: usize) -> f64 {
    match schedule.mode {
        SigmaMode::Learnable => schedule.sigma0,
        _ => match sigma_value(schedule, epoch, total_epochs, &[]) {
            SigmaVector::Scalar(s) => s,
            SigmaVector::PerComponent(_) => unreachable!("non-learnable modes are scalar"),
        },
    }
}

// ---------------------------------------------------------------------------
// Sampling and the estimator
// ---------------------------------------------------------------------------

/// One image's multi-sample exploration state.
#[derive(Debug, Clone)]
pub struct SampleBundle {
    /// Gaussian mean: the pre-quantization activation.
    pub mean: Vec<f64>,
    pub sigma: SigmaVector,
    /// m perturbed activations (retained for the log-density gradient).
    pub perturbed: Vec<Vec<f64>>,
    /// Binarized transmissions of each perturbed activation.
    pub bits: Vec<BitVector>,
    /// Rewards, filled by [`SampleBundle::set_rewards`].
    pub rewards: Vec<f64>,
    /// Leave-one-out advantages, derived from the rewards.
    pub advantages: Vec<f64>,
}

/// Draws m perturbed activations mean + sigma * z and binarizes each.
/// Rewards and advantages stay empty until scored.
pub fn sample_actions(
    mean: &[f64],
    sigma: &SigmaVector,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> SampleBundle {
    let mut perturbed = Vec::with_capacity(m);
    let mut bits = Vec::with_capacity(m);
    for _ in 0..m {
        let sample: Vec<f64> = mean
            .iter()
            .enumerate()
            .map(|(i, &mu)| {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma.at(i) * z
            })
            .collect();
        bits.push(quantize(&sample));
        perturbed.push(sample);
    }
    SampleBundle {
        mean: mean.to_vec(),
        sigma: sigma.clone(),
        perturbed,
        bits,
        rewards: Vec::new(),
        advantages: Vec::new(),
    }
}

impl SampleBundle {
    pub fn set_rewards(&mut self, rewards: Vec<f64>) {
        assert_eq!(rewards.len(), self.perturbed.len());
        self.advantages = leave_one_out_advantages(&rewards);
        self.rewards = rewards;
    }
}

/// Advantage of each sample against the mean of the others:
/// `adv_i = r_i - avg_{k != i} r_k`, computed as a sum of pairwise
/// differences so equal rewards yield exact zeros.
pub fn leave_one_out_advantages(rewards: &[f64]) -> Vec<f64> {
    let m = rewards.len();
    assert!(m >= 2, "leave-one-out baseline needs at least 2 samples");
    let denom = (m - 1) as f64;
    rewards
        .iter()
        .map(|&ri| {
            let diff_sum: f64 = rewards.iter().map(|&rk| ri - rk).sum();
            diff_sum / denom
        })
        .collect()
}

/// Gradient of the Gaussian log-density w.r.t. its mean:
/// `(sample - mean) / sigma^2` componentwise.
pub fn log_prob_grad(sample: &[f64], mean: &[f64], sigma: &SigmaVector) -> Result<Vec<f64>> {
    if sample.len() != mean.len() {
        return Err(Error::Contract(format!(
            "sample length {} vs mean length {}",
            sample.len(),
            mean.len()
        )));
    }
    let mut out = Vec::with_capacity(mean.len());
    for i in 0..mean.len() {
        let s = sigma.at(i);
        if s == 0.0 {
            return Err(Error::Contract("sigma component is zero".into()));
        }
        out.push((sample[i] - mean[i]) / (s * s));
    }
    Ok(out)
}

/// Advantage-weighted sum of log-density gradients for one image:
/// `sum_i adv_i * (perturbed_i - mean) / sigma^2`.
///
/// This is the upstream gradient injected at the Gaussian mean before
/// chaining through the model.
pub fn bundle_upstream(bundle: &SampleBundle) -> Result<Vec<f64>> {
    assert_eq!(
        bundle.advantages.len(),
        bundle.perturbed.len(),
        "bundle must be scored before use"
    );
    let mut upstream = vec![0.0; bundle.mean.len()];
    for (sample, &adv) in bundle.perturbed.iter().zip(&bundle.advantages) {
        let lpg = log_prob_grad(sample, &bundle.mean, &bundle.sigma)?;
        for (u, g) in upstream.iter_mut().zip(lpg) {
            *u += adv * g;
        }
    }
    Ok(upstream)
}

/// Contiguous near-equal chunk boundaries, fixed independently of thread
/// count so parallel accumulation order never changes.
fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    let per = len.div_ceil(GRAD_CHUNKS).max(1);
    (0..len)
        .step_by(per)
        .map(|start| start..(start + per).min(len))
        .collect()
}

/// The semantic policy gradient over a batch: the average over samples and
/// images of the advantage-weighted log-density gradient, chained through
/// `backprop` (which accumulates model gradients for one image given the
/// upstream at the Gaussian mean). Scaled by 1/(m T).
pub fn policy_gradient<F>(
    bundles: &[SampleBundle],
    zeros: &EncoderGrads,
    backprop: F,
) -> Result<EncoderGrads>
where
    F: Fn(usize, &[f64], &mut EncoderGrads) + Sync,
{
    let m = bundles
        .first()
        .map(|b| b.perturbed.len())
        .unwrap_or(1)
        .max(1);
    let t = bundles.len().max(1);

    let upstreams: Vec<Vec<f64>> = bundles
        .par_iter()
        .map(bundle_upstream)
        .collect::<Result<_>>()?;

    let partials: Vec<EncoderGrads> = chunk_ranges(bundles.len())
        .into_par_iter()
        .map(|range| {
            let mut grads = zeros.clone();
            for idx in range {
                backprop(idx, &upstreams[idx], &mut grads);
            }
            grads
        })
        .collect();

    let mut total = zeros.clone();
    for part in &partials {
        total.accumulate(part);
    }
    total.scale(1.0 / (m as f64 * t as f64));
    Ok(total)
}

// ---------------------------------------------------------------------------
// Forward-only reward path (channel + frozen receiver)
// ---------------------------------------------------------------------------

/// Forward-only transmission evaluation used while training the TX.
///
/// Implementations expose reconstruction values and nothing else: no
/// parameter access, no derivative information. The TX update is therefore
/// structurally independent of any gradient the channel or receiver could
/// offer.
pub trait RewardPath: Sync {
    fn transmit_reconstruct(&self, bits: &BitVector, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// The standard reward path: simulated channel followed by the frozen
/// receiver.
pub struct ChannelAndDecoder<'a> {
    pub channel: &'a ChannelConfig,
    pub decoder: &'a DecoderParams,
}

impl RewardPath for ChannelAndDecoder<'_> {
    fn transmit_reconstruct(&self, bits: &BitVector, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let received = transmit(bits, self.channel, rng);
        let embedding = dequantize(&received, self.decoder)?;
        let outputs = crate::transceiver::decode_trace_from_embedding(&embedding, self.decoder)?;
        Ok(outputs.into_iter().next_back().expect("non-empty stack"))
    }
}

/// Derivative-blocking barrier: wraps any reward path and forwards only the
/// reconstruction values.
pub struct GradientBarrier<P>(pub P);

impl<P: RewardPath> RewardPath for GradientBarrier<P> {
    fn transmit_reconstruct(&self, bits: &BitVector, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.0.transmit_reconstruct(bits, rng)
    }
}

// ---------------------------------------------------------------------------
// Training steps
// ---------------------------------------------------------------------------

/// Stream coordinates of one optimization step.
#[derive(Debug, Clone, Copy)]
pub struct StepCtx {
    pub seed: u64,
    /// 1-based epoch.
    pub epoch: usize,
    /// 0-based batch index within the epoch.
    pub step: usize,
    pub total_epochs: usize,
}

impl StepCtx {
    fn sampler(&self, phase: u64, image: usize) -> ChaCha8Rng {
        rng::stream(
            self.seed,
            domain::SAMPLER,
            &[self.epoch as u64, phase, self.step as u64, image as u64],
        )
    }

    fn channel(&self, phase: u64, image: usize, sample: usize) -> ChaCha8Rng {
        rng::stream(
            self.seed,
            domain::CHANNEL,
            &[
                self.epoch as u64,
                phase,
                self.step as u64,
                image as u64,
                sample as u64,
            ],
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TxStepStats {
    /// Mean transmitter reward over all m x T samples.
    pub mean_reward: f64,
    /// Mean fraction of set bits over transmitted samples.
    pub mean_sparsity: f64,
    /// Mean L1 loss over samples.
    pub mean_l1: f64,
    /// (min, mean, max) of the exploration scale across the batch.
    pub sigma: (f64, f64, f64),
}

/// One transmitter update: encode, explore, transmit, score with the frozen
/// receiver, then ascend the policy gradient. The reward path is forward
/// only; no gradient is taken through quantization, the channel, or the
/// receiver.
pub fn train_tx_step<P: RewardPath>(
    batch: &[NormalizedImage],
    enc: &mut EncoderParams,
    reward_path: &P,
    schedule: &SigmaSchedule,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
    ctx: &StepCtx,
) -> Result<TxStepStats> {
    struct PerImage {
        trace: EncoderTrace,
        bundle: SampleBundle,
        reward_sum: f64,
        sparsity_sum: f64,
        l1_sum: f64,
        sigma: (f64, f64, f64),
    }

    let m = cfg.samples;
    let per_image: Vec<PerImage> = batch
        .par_iter()
        .enumerate()
        .map(|(t, img)| -> Result<PerImage> {
            let trace = encode_trace(img, enc)?;
            let sigma = sigma_value(schedule, ctx.epoch, ctx.total_epochs, &trace.preact);
            let mut bundle =
                sample_actions(&trace.preact, &sigma, m, &mut ctx.sampler(PHASE_TX, t));
            let mut rewards = Vec::with_capacity(m);
            let mut sparsity_sum = 0.0;
            let mut l1_sum = 0.0;
            for (i, bits) in bundle.bits.iter().enumerate() {
                let recon = reward_path
                    .transmit_reconstruct(bits, &mut ctx.channel(PHASE_TX, t, i))?;
                let l1 = l1_loss_values(img, &recon)?;
                rewards.push(1.0 - l1 - cfg.sparsity_weight * bits.popcount() as f64);
                sparsity_sum += bits.popcount() as f64 / bits.len() as f64;
                l1_sum += l1;
            }
            let reward_sum = rewards.iter().sum();
            bundle.set_rewards(rewards);
            let sigma_summary = bundle.sigma.summary(bundle.mean.len());
            Ok(PerImage {
                trace,
                bundle,
                reward_sum,
                sparsity_sum,
                l1_sum,
                sigma: sigma_summary,
            })
        })
        .collect::<Result<_>>()?;

    let bundles: Vec<SampleBundle> = per_image.iter().map(|p| p.bundle.clone()).collect();
    let zeros = enc.zeros_like();
    let enc_ref: &EncoderParams = enc;
    let grads = policy_gradient(&bundles, &zeros, |t, upstream, out| {
        encoder_backward(&batch[t], enc_ref, &per_image[t].trace, upstream, out);
    })?;

    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient {
            context: format!("tx step {} epoch {}", ctx.step, ctx.epoch),
            detail: "policy gradient contains NaN or Inf".into(),
        });
    }

    let grad_tensors: Vec<&crate::nn::Tensor> = grads.tensors().iter().map(|(_, t)| *t).collect();
    opt.ascend(&mut enc.tensors_mut(), &grad_tensors);

    let samples_total = (m * batch.len()) as f64;
    let sigma_min = per_image.iter().map(|p| p.sigma.0).fold(f64::INFINITY, f64::min);
    let sigma_max = per_image
        .iter()
        .map(|p| p.sigma.2)
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma_mean =
        per_image.iter().map(|p| p.sigma.1).sum::<f64>() / batch.len().max(1) as f64;
    Ok(TxStepStats {
        mean_reward: per_image.iter().map(|p| p.reward_sum).sum::<f64>() / samples_total,
        mean_sparsity: per_image.iter().map(|p| p.sparsity_sum).sum::<f64>() / samples_total,
        mean_l1: per_image.iter().map(|p| p.l1_sum).sum::<f64>() / samples_total,
        sigma: (sigma_min, sigma_mean, sigma_max),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RxStepStats {
    /// Mean receiver reward of the actual (unperturbed) reconstructions.
    pub mean_reward: f64,
    pub mean_l1: f64,
}

/// One receiver update with the transmitter frozen. In `self_critic` mode
/// the decoder output is the mean of a pixel-space Gaussian policy scored
/// with the same leave-one-out estimator; in `direct_backprop` mode the L1
/// objective is differentiated analytically (the channel precedes the
/// gradient path, so nothing blocks it).
pub fn train_rx_step(
    batch: &[NormalizedImage],
    enc: &EncoderParams,
    dec: &mut DecoderParams,
    channel: &ChannelConfig,
    schedule: &SigmaSchedule,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
    ctx: &StepCtx,
) -> Result<RxStepStats> {
    struct PerImage {
        received: Vec<f64>,
        trace: DecoderTrace,
        upstream: Vec<f64>,
        reward: f64,
        l1: f64,
    }

    let m = cfg.samples;
    let sigma = rx_sigma(schedule, ctx.epoch, ctx.total_epochs);
    let per_image: Vec<PerImage> = batch
        .par_iter()
        .enumerate()
        .map(|(t, img)| -> Result<PerImage> {
            let enc_trace = encode_trace(img, enc)?;
            let bits = quantize(&enc_trace.preact);
            let received = transmit(&bits, channel, &mut ctx.channel(PHASE_RX, t, 0));
            let trace = decode_trace(&received, dec)?;
            let output = trace.output();
            let l1 = l1_loss_values(img, output)?;
            let reward = 1.0 - l1;

            let upstream = match cfg.rx_mode {
                RxMode::DirectBackprop => {
                    // d reward / d output = -sign(output - original) / (2 d1 d2 C)
                    let norm = 2.0 * (img.height() * img.width()) as f64 * img.channels() as f64;
                    img.data()
                        .iter()
                        .zip(output)
                        .map(|(orig, out)| -(out - orig).signum() / norm)
                        .collect()
                }
                RxMode::SelfCritic => {
                    let mut rng = ctx.sampler(PHASE_RX, t);
                    let mut samples = Vec::with_capacity(m);
                    let mut rewards = Vec::with_capacity(m);
                    for _ in 0..m {
                        let perturbed: Vec<f64> = output
                            .iter()
                            .map(|&v| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                v + sigma * z
                            })
                            .collect();
                        rewards.push(1.0 - l1_loss_values(img, &perturbed)?);
                        samples.push(perturbed);
                    }
                    let advantages = leave_one_out_advantages(&rewards);
                    let mut upstream = vec![0.0; output.len()];
                    let inv_var = 1.0 / (sigma * sigma);
                    for (sample, &adv) in samples.iter().zip(&advantages) {
                        for ((u, s), o) in upstream.iter_mut().zip(sample).zip(output) {
                            *u += adv * (s - o) * inv_var;
                        }
                    }
                    upstream
                }
            };
            Ok(PerImage {
                received,
                trace,
                upstream,
                reward,
                l1,
            })
        })
        .collect::<Result<_>>()?;

    let zeros = dec.zeros_like();
    let dec_ref: &DecoderParams = dec;
    let partials: Vec<DecoderGrads> = chunk_ranges(batch.len())
        .into_par_iter()
        .map(|range| {
            let mut grads = zeros.clone();
            for idx in range {
                let p = &per_image[idx];
                decoder_backward(&p.received, dec_ref, &p.trace, &p.upstream, &mut grads);
            }
            grads
        })
        .collect();
    let mut grads = zeros;
    for part in &partials {
        grads.accumulate(part);
    }
    let scale = match cfg.rx_mode {
        RxMode::DirectBackprop => 1.0 / batch.len().max(1) as f64,
        RxMode::SelfCritic => 1.0 / (m as f64 * batch.len().max(1) as f64),
    };
    grads.scale(scale);

    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient {
            context: format!("rx step {} epoch {}", ctx.step, ctx.epoch),
            detail: "receiver gradient contains NaN or Inf".into(),
        });
    }

    let grad_tensors: Vec<&crate::nn::Tensor> = grads.tensors().iter().map(|(_, t)| *t).collect();
    opt.ascend(&mut dec.tensors_mut(), &grad_tensors);

    let count = batch.len().max(1) as f64;
    Ok(RxStepStats {
        mean_reward: per_image.iter().map(|p| p.reward).sum::<f64>() / count,
        mean_l1: per_image.iter().map(|p| p.l1).sum::<f64>() / count,
    })
}

// ---------------------------------------------------------------------------
// Epoch-level training
// ---------------------------------------------------------------------------

/// Per-epoch record of training and evaluation statistics.
///
/// `wall_clock_s` is informational and excluded from the deterministic CSV
/// serialization so identical runs produce byte-identical logs.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub epoch: usize,
    pub sigma_mode: SigmaMode,
    pub reward_tx: f64,
    pub reward_rx: f64,
    pub l1: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sparsity: f64,
    pub sigma_min: f64,
    pub sigma_mean: f64,
    pub sigma_max: f64,
    pub wall_clock_s: f64,
}

/// Version tag written as the first line of every metrics CSV.
pub const METRICS_CSV_SCHEMA: &str = "sparsesbc.metrics.v1";

pub fn metrics_csv_header() -> String {
    format!(
        "# schema: {METRICS_CSV_SCHEMA}\nepoch,sigma_mode,reward_tx,reward_rx,l1,psnr_db,ssim,sparsity,sigma_min,sigma_mean,sigma_max"
    )
}

impl RunRecord {
    /// Deterministic CSV row (excludes wall-clock time).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.sigma_mode.as_str(),
            self.reward_tx,
            self.reward_rx,
            self.l1,
            self.psnr_db,
            self.ssim,
            self.sparsity,
            self.sigma_min,
            self.sigma_mean,
            self.sigma_max,
        )
    }
}

/// Deterministic evaluation summary over a set of images.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sparsity: f64,
    pub l1: f64,
}

/// Quality of one evaluated transmission.
#[derive(Debug, Clone, Copy)]
pub struct ImageEval {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sparsity: f64,
    pub l1: f64,
}

/// Transmits every image once (deterministic payload, seeded channel noise)
/// and scores each reconstruction.
pub fn evaluate_images_detailed(
    samples: &[NormalizedImage],
    enc: &EncoderParams,
    dec: &DecoderParams,
    channel: &ChannelConfig,
    seed: u64,
    epoch: usize,
) -> Result<Vec<ImageEval>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(idx, img)| -> Result<ImageEval> {
            let trace = encode_trace(img, enc)?;
            let bits = quantize(&trace.preact);
            let mut rng = rng::stream(seed, domain::EVAL, &[epoch as u64, idx as u64]);
            let received = transmit(&bits, channel, &mut rng);
            let dtrace = decode_trace(&received, dec)?;
            let output = dtrace.output();
            let original = crate::imaging::denormalize(img);
            let reconstructed = crate::imaging::denormalize_values(
                img.height(),
                img.width(),
                img.channels(),
                output,
            )?;
            // Shrink the SSIM window for images smaller than 8x8.
            let window = crate::metrics::SSIM_WINDOW
                .min(img.height())
                .min(img.width());
            Ok(ImageEval {
                psnr_db: crate::metrics::psnr(&original, &reconstructed)?,
                ssim: crate::metrics::ssim_with_params(
                    &original,
                    &reconstructed,
                    window,
                    1.0,
                    1.0,
                    1.0,
                )?,
                sparsity: crate::metrics::sparsity_fraction(&bits),
                l1: l1_loss_values(img, output)?,
            })
        })
        .collect()
}

/// Mean PSNR/SSIM/sparsity/L1 over a set of images. The PSNR mean keeps the
/// infinity sentinel if any image reconstructs exactly.
pub fn evaluate_images(
    samples: &[NormalizedImage],
    enc: &EncoderParams,
    dec: &DecoderParams,
    channel: &ChannelConfig,
    seed: u64,
    epoch: usize,
) -> Result<EvalSummary> {
    let rows = evaluate_images_detailed(samples, enc, dec, channel, seed, epoch)?;
    let n = rows.len().max(1) as f64;
    Ok(EvalSummary {
        psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        sparsity: rows.iter().map(|r| r.sparsity).sum::<f64>() / n,
        l1: rows.iter().map(|r| r.l1).sum::<f64>() / n,
    })
}

/// Alternate-learning driver owning both models and their optimizers.
pub struct Trainer {
    pub channel: ChannelConfig,
    pub cfg: TrainConfig,
    pub enc: EncoderParams,
    pub dec: DecoderParams,
    opt_enc: Optimizer,
    opt_dec: Optimizer,
    pub completed_epochs: usize,
}

impl Trainer {
    pub fn new(
        arch: &crate::transceiver::ArchConfig,
        channel: ChannelConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (enc, dec) = crate::transceiver::init_params(arch, cfg.seed)?;
        let opt_enc = Optimizer::new(cfg.tx_optimizer_kind(), cfg.tx_lr());
        let opt_dec = Optimizer::new(cfg.optimizer, cfg.learning_rate);
        Ok(Trainer {
            channel,
            cfg,
            enc,
            dec,
            opt_enc,
            opt_dec,
            completed_epochs: 0,
        })
    }

    pub fn arch(&self) -> &crate::transceiver::ArchConfig {
        &self.enc.arch
    }

    /// Serializes models, optimizer state, and resume coordinates.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = crate::transceiver::CheckpointMeta {
            arch: self.enc.arch.clone(),
            epoch: self.completed_epochs,
            base_seed: self.cfg.seed,
            optimizer: self.cfg.optimizer.as_str().to_string(),
            tx_optimizer: self
                .cfg
                .tx_optimizer
                .map(|kind| kind.as_str().to_string()),
            adam_step_enc: self.opt_enc.state().map(|(t, _, _)| t),
            adam_step_dec: self.opt_dec.state().map(|(t, _, _)| t),
        };
        let mut extra: Vec<(String, &crate::nn::Tensor)> = Vec::new();
        if let Some((_, first, second)) = self.opt_enc.state() {
            for (i, t) in first.iter().enumerate() {
                extra.push((format!("opt.enc.m.{i}"), t));
            }
            for (i, t) in second.iter().enumerate() {
                extra.push((format!("opt.enc.v.{i}"), t));
            }
        }
        if let Some((_, first, second)) = self.opt_dec.state() {
            for (i, t) in first.iter().enumerate() {
                extra.push((format!("opt.dec.m.{i}"), t));
            }
            for (i, t) in second.iter().enumerate() {
                extra.push((format!("opt.dec.v.{i}"), t));
            }
        }
        crate::transceiver::save_checkpoint(path, &self.enc, &self.dec, &meta, &extra)
    }

    /// Restores a trainer from a checkpoint. The seed and optimizer kind
    /// come from the file (resume must continue the original streams);
    /// other hyperparameters come from `cfg`.
    pub fn from_checkpoint(
        path: &std::path::Path,
        channel: ChannelConfig,
        mut cfg: TrainConfig,
    ) -> Result<Self> {
        let (enc, dec, meta, extra) = crate::transceiver::load_checkpoint(path)?;
        let rx_kind: OptimizerKind = meta
            .optimizer
            .parse()
            .map_err(|e: String| Error::Checkpoint(e))?;
        if rx_kind != cfg.optimizer {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with {}, config requests {}",
                meta.optimizer,
                cfg.optimizer.as_str()
            )));
        }
        let tx_kind: OptimizerKind = match &meta.tx_optimizer {
            Some(name) => name.parse().map_err(|e: String| Error::Checkpoint(e))?,
            None => rx_kind,
        };
        if tx_kind != cfg.tx_optimizer_kind() {
            return Err(Error::Checkpoint(format!(
                "checkpoint transmitter optimizer {} does not match config {}",
                tx_kind.as_str(),
                cfg.tx_optimizer_kind().as_str()
            )));
        }
        cfg.seed = meta.base_seed;
        cfg.validate()?;
        let mut opt_enc = Optimizer::new(tx_kind, cfg.tx_lr());
        let mut opt_dec = Optimizer::new(rx_kind, cfg.learning_rate);
        let collect = |prefix: &str| -> Vec<crate::nn::Tensor> {
            let mut found: Vec<(usize, crate::nn::Tensor)> = extra
                .iter()
                .filter_map(|(name, t)| {
                    name.strip_prefix(prefix)
                        .and_then(|idx| idx.parse::<usize>().ok())
                        .map(|idx| (idx, t.clone()))
                })
                .collect();
            found.sort_by_key(|(idx, _)| *idx);
            found.into_iter().map(|(_, t)| t).collect()
        };
        if let Some(step_enc) = meta.adam_step_enc {
            let (m_e, v_e) = (collect("opt.enc.m."), collect("opt.enc.v."));
            if !m_e.is_empty() {
                opt_enc.restore_state(step_enc, m_e, v_e);
            }
        }
        if let Some(step_dec) = meta.adam_step_dec {
            let (m_d, v_d) = (collect("opt.dec.m."), collect("opt.dec.v."));
            if !m_d.is_empty() {
                opt_dec.restore_state(step_dec, m_d, v_d);
            }
        }
        Ok(Trainer {
            channel,
            cfg,
            enc,
            dec,
            opt_enc,
            opt_dec,
            completed_epochs: meta.epoch,
        })
    }

    /// Runs epochs `completed_epochs + 1 ..= cfg.epochs`: a full TX pass
    /// with the receiver frozen, then a full RX pass with the transmitter
    /// frozen, then a deterministic evaluation on the leading
    /// `eval_count` samples. `on_epoch` sees each record as it is produced
    /// (for CSV streaming and periodic checkpoints).
    pub fn run<F>(&mut self, samples: &[NormalizedImage], mut on_epoch: F) -> Result<Vec<RunRecord>>
    where
        F: FnMut(&RunRecord, &Trainer) -> Result<()>,
    {
        if samples.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let schedule = SigmaSchedule {
            mode: self.cfg.sigma_mode,
            sigma0: self.cfg.sigma0,
        };
        let eval_len = self.cfg.eval_count.min(samples.len()).max(1);
        let mut records = Vec::new();

        for epoch in (self.completed_epochs + 1)..=self.cfg.epochs {
            let start = std::time::Instant::now();
            let order = shuffled_indices(samples.len(), self.cfg.seed, epoch);
            let shuffled: Vec<NormalizedImage> =
                order.iter().map(|&i| samples[i].clone()).collect();

            // TX pass (receiver frozen).
            let mut tx_reward_sum = 0.0;
            let mut tx_weight = 0.0;
            let mut sigma_min = f64::INFINITY;
            let mut sigma_max = f64::NEG_INFINITY;
            let mut sigma_mean_sum = 0.0;
            let mut sigma_mean_weight = 0.0;
            for (step, batch) in shuffled.chunks(self.cfg.batch_size).enumerate() {
                let ctx = StepCtx {
                    seed: self.cfg.seed,
                    epoch,
                    step,
                    total_epochs: self.cfg.epochs,
                };
                let stats = {
                    let path = ChannelAndDecoder {
                        channel: &self.channel,
                        decoder: &self.dec,
                    };
                    train_tx_step(
                        batch,
                        &mut self.enc,
                        &path,
                        &schedule,
                        &self.cfg,
                        &mut self.opt_enc,
                        &ctx,
                    )?
                };
                let weight = batch.len() as f64;
                tx_reward_sum += stats.mean_reward * weight;
                tx_weight += weight;
                sigma_min = sigma_min.min(stats.sigma.0);
                sigma_max = sigma_max.max(stats.sigma.2);
                sigma_mean_sum += stats.sigma.1 * weight;
                sigma_mean_weight += weight;
            }

            // RX pass (transmitter frozen).
            let mut rx_reward_sum = 0.0;
            let mut rx_weight = 0.0;
            for (step, batch) in shuffled.chunks(self.cfg.batch_size).enumerate() {
                let ctx = StepCtx {
                    seed: self.cfg.seed,
                    epoch,
                    step,
                    total_epochs: self.cfg.epochs,
                };
                let stats = train_rx_step(
                    batch,
                    &self.enc,
                    &mut self.dec,
                    &self.channel,
                    &schedule,
                    &self.cfg,
                    &mut self.opt_dec,
                    &ctx,
                )?;
                let weight = batch.len() as f64;
                rx_reward_sum += stats.mean_reward * weight;
                rx_weight += weight;
            }

            let eval = evaluate_images(
                &samples[..eval_len],
                &self.enc,
                &self.dec,
                &self.channel,
                self.cfg.seed,
                epoch,
            )?;

            let record = RunRecord {
                epoch,
                sigma_mode: self.cfg.sigma_mode,
                reward_tx: tx_reward_sum / tx_weight,
                reward_rx: rx_reward_sum / rx_weight,
                l1: eval.l1,
                psnr_db: eval.psnr_db,
                ssim: eval.ssim,
                sparsity: eval.sparsity,
                sigma_min,
                sigma_mean: sigma_mean_sum / sigma_mean_weight,
                sigma_max,
                wall_clock_s: start.elapsed().as_secs_f64(),
            };
            self.completed_epochs = epoch;
            on_epoch(&record, self)?;
            records.push(record);
        }
        Ok(records)
    }
}

/// Deterministic Fisher-Yates permutation of `0..len` for one epoch.
pub fn shuffled_indices(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng::stream(seed, domain::SHUFFLE, &[epoch as u64]);
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Full alternate-training run from freshly initialized parameters.
pub fn train_alternate<F>(
    samples: &[NormalizedImage],
    arch: &crate::transceiver::ArchConfig,
    channel: ChannelConfig,
    cfg: TrainConfig,
    on_epoch: F,
) -> Result<(EncoderParams, DecoderParams, Vec<RunRecord>)>
where
    F: FnMut(&RunRecord, &Trainer) -> Result<()>,
{
    let mut trainer = Trainer::new(arch, channel, cfg)?;
    let records = trainer.run(samples, on_epoch)?;
    Ok((trainer.enc, trainer.dec, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{normalize, Image};
    use crate::transceiver::{init_params, ArchConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn toy_arch() -> ArchConfig {
        ArchConfig {
            height: 4,
            width: 4,
            channels: 1,
            conv_channels: vec![4],
            n_bits: 8,
        }
    }

    fn toy_images(count: usize, arch: &ArchConfig, seed: u64) -> Vec<NormalizedImage> {
        let mut rng = rng::stream(seed, "trainer-test", &[]);
        (0..count)
            .map(|_| {
                let data = (0..arch.image_len()).map(|_| rng.random::<u8>()).collect();
                normalize(&Image::new(arch.height, arch.width, arch.channels, data).unwrap())
            })
            .collect()
    }

    // --- rewards ---------------------------------------------------------

    #[test]
    fn reward_tx_identity_zero_bits_is_one() {
        let img = toy_images(1, &toy_arch(), 1).remove(0);
        let bits = BitVector::new(vec![0; 10]).unwrap();
        assert_eq!(reward_tx(&img, &img, &bits, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn reward_tx_three_ones_of_ten() {
        let img = toy_images(1, &toy_arch(), 2).remove(0);
        let bits = BitVector::new(vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_relative_eq!(
            reward_tx(&img, &img, &bits, 0.1).unwrap(),
            0.7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reward_tx_cross_checks_elementwise() {
        let imgs = toy_images(2, &toy_arch(), 3);
        let bits = BitVector::new(vec![1, 0, 1, 1, 0, 0, 1, 0]).unwrap();
        let eps = 0.1;
        // Independent elementwise computation.
        let mut sum = 0.0;
        for (a, b) in imgs[0].data().iter().zip(imgs[1].data()) {
            sum += (a - b).abs();
        }
        let l1 = sum / (2.0 * 16.0);
        let expect = 1.0 - l1 - eps * 4.0;
        assert_relative_eq!(
            reward_tx(&imgs[0], &imgs[1], &bits, eps).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reward_rx_equals_reward_tx_at_zero_weight() {
        let imgs = toy_images(2, &toy_arch(), 4);
        let bits = BitVector::new(vec![1; 8]).unwrap();
        assert_eq!(
            reward_rx(&imgs[0], &imgs[1]).unwrap(),
            reward_tx(&imgs[0], &imgs[1], &bits, 0.0).unwrap()
        );
    }

    #[test]
    fn reward_rx_unit_difference() {
        let ones = NormalizedImage::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let zeros = NormalizedImage::new(2, 2, 1, vec![0.0; 4]).unwrap();
        // L of a unit-difference single-channel image is 0.5.
        assert_relative_eq!(reward_rx(&ones, &zeros).unwrap(), 0.5, epsilon = 1e-12);
        assert!(reward_rx(&ones, &ones).unwrap() == 1.0);
    }

    // --- sigma schedule ----------------------------------------------------

    #[test]
    fn sigma_constant_everywhere() {
        let sched = SigmaSchedule {
            mode: SigmaMode::Constant,
            sigma0: 0.1,
        };
        for epoch in [1, 50, 200] {
            assert_eq!(
                sigma_value(&sched, epoch, 200, &[]),
                SigmaVector::Scalar(0.1)
            );
        }
    }

    #[test]
    fn sigma_annealed_endpoints() {
        let sched = SigmaSchedule {
            mode: SigmaMode::Annealed,
            sigma0: 0.1,
        };
        let at = |epoch| match sigma_value(&sched, epoch, 200, &[]) {
            SigmaVector::Scalar(s) => s,
            _ => unreachable!(),
        };
        assert_relative_eq!(at(1), 0.1, epsilon = 1e-15);
        assert_relative_eq!(at(200), 0.01, epsilon = 1e-15);
        assert!(at(100) < at(1) && at(100) > at(200));
    }

    #[test]
    fn sigma_learnable_is_sigmoid_of_activation() {
        let sched = SigmaSchedule {
            mode: SigmaMode::Learnable,
            sigma0: 0.1,
        };
        match sigma_value(&sched, 1, 10, &[0.0, 0.9, -0.9]) {
            SigmaVector::PerComponent(v) => {
                assert_relative_eq!(v[0], 0.5, epsilon = 1e-15);
                assert!(v.iter().all(|&s| s > 0.0 && s < 1.0));
            }
            _ => panic!("learnable mode must be per-component"),
        }
    }

    // --- estimator pieces -------------------------------------------------

    #[test]
    fn advantages_for_two_samples_are_antisymmetric() {
        let adv = leave_one_out_advantages(&[0.7, 0.3]);
        assert_relative_eq!(adv[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(adv[1], -0.4, epsilon = 1e-15);
    }

    #[test]
    fn equal_rewards_give_exactly_zero_advantages() {
        // 0.1 sums inexactly in f64; the pairwise-difference form must
        // still return exact zeros.
        let adv = leave_one_out_advantages(&[0.1; 5]);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn log_prob_grad_cases() {
        let sigma = SigmaVector::Scalar(0.1);
        let at_mean = log_prob_grad(&[0.3, -0.2], &[0.3, -0.2], &sigma).unwrap();
        assert!(at_mean.iter().all(|&g| g == 0.0));

        let scalar = log_prob_grad(&[0.5], &[0.3], &sigma).unwrap();
        assert_relative_eq!(scalar[0], 20.0, epsilon = 1e-10);

        assert!(log_prob_grad(&[0.5], &[0.3], &SigmaVector::Scalar(0.0)).is_err());
    }

    /// Finite-difference oracle for the Gaussian log-density derivative.
    #[test]
    fn log_prob_grad_matches_log_density_derivative() {
        let log_density = |x: f64, mu: f64, s: f64| -> f64 {
            let d = x - mu;
            -0.5 * (d * d) / (s * s) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let mut rng = rng::stream(5, "lpg-test", &[]);
        for _ in 0..32 {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            let mu = rng.random::<f64>() * 2.0 - 1.0;
            let s = 0.05 + rng.random::<f64>();
            let h = 1e-7;
            let fd = (log_density(x, mu + h, s) - log_density(x, mu - h, s)) / (2.0 * h);
            let got = log_prob_grad(&[x], &[mu], &SigmaVector::Scalar(s)).unwrap()[0];
            assert!((got - fd).abs() < 1e-6 * got.abs().max(1.0));
        }
    }

    #[test]
    fn tiny_sigma_samples_collapse_to_mean_bits() {
        let mean = vec![0.4, -0.7, 0.2, -0.1];
        let sigma = SigmaVector::Scalar(1e-12);
        let bundle = sample_actions(&mean, &sigma, 5, &mut rng::stream(6, "collapse", &[]));
        let reference = quantize(&mean);
        for bits in &bundle.bits {
            assert_eq!(bits, &reference);
        }
    }

    #[test]
    fn sample_bundles_are_seed_deterministic() {
        let mean = vec![0.1; 16];
        let sigma = SigmaVector::Scalar(0.2);
        let a = sample_actions(&mean, &sigma, 3, &mut rng::stream(7, "det", &[1]));
        let b = sample_actions(&mean, &sigma, 3, &mut rng::stream(7, "det", &[1]));
        assert_eq!(a.perturbed, b.perturbed);
        let c = sample_actions(&mean, &sigma, 3, &mut rng::stream(7, "det", &[2]));
        assert_ne!(a.perturbed, c.perturbed);
    }

    /// Monte-Carlo sanity: empirical mean of perturbed samples approaches mu.
    #[test]
    fn sample_mean_concentrates_on_mu() {
        let mean = vec![0.37];
        let sigma = SigmaVector::Scalar(0.5);
        let draws = 100_000;
        let mut rng = rng::stream(8, "mc-mean", &[]);
        let mut sum = 0.0;
        for _ in 0..draws {
            let bundle = sample_actions(&mean, &sigma, 2, &mut rng);
            sum += bundle.perturbed[0][0] + bundle.perturbed[1][0];
        }
        let empirical = sum / (2.0 * draws as f64);
        let tolerance = 3.0 * 0.5 / (2.0 * draws as f64).sqrt();
        assert!(
            (empirical - 0.37).abs() < tolerance,
            "empirical {empirical} vs 0.37 +/- {tolerance}"
        );
    }

    /// Small-scale version of the quadratic-toy estimator check (the
    /// acceptance suite runs the full-size one).
    #[test]
    fn estimator_tracks_analytic_gradient_direction() {
        let (mu, c, sigma) = (0.3, 1.0, 0.2);
        let analytic = -2.0 * (mu - c);
        let m = 5;
        let batches = 20_000;
        let mut rng = rng::stream(9, "toy-pg", &[]);
        let mut total = 0.0;
        for _ in 0..batches {
            let bundle = sample_actions(&[mu], &SigmaVector::Scalar(sigma), m, &mut rng);
            let rewards: Vec<f64> = bundle
                .perturbed
                .iter()
                .map(|a| -(a[0] - c) * (a[0] - c))
                .collect();
            let advantages = leave_one_out_advantages(&rewards);
            let mut est = 0.0;
            for (sample, &adv) in bundle.perturbed.iter().zip(&advantages) {
                est += (sample[0] - mu) / (sigma * sigma) * adv;
            }
            total += est / m as f64;
        }
        let estimate = total / batches as f64;
        assert!(
            (estimate - analytic).abs() / analytic.abs() < 0.1,
            "estimate {estimate} vs analytic {analytic}"
        );
    }

    // --- step-level properties --------------------------------------------

    fn toy_setup(seed: u64) -> (ArchConfig, EncoderParams, DecoderParams, TrainConfig) {
        let arch = toy_arch();
        let (enc, dec) = init_params(&arch, seed).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            learning_rate: 1e-3,
            samples: 5,
            epochs: 1,
            sparsity_weight: 0.0,
            sigma_mode: SigmaMode::Constant,
            sigma0: 0.1,
            rx_mode: RxMode::DirectBackprop,
            optimizer: OptimizerKind::Sgd,
            tx_optimizer: None,
            tx_learning_rate: None,
            seed,
            checkpoint_interval: 0,
            eval_count: 4,
        };
        (arch, enc, dec, cfg)
    }

    #[test]
    fn zero_decoder_means_equal_rewards_and_unchanged_tx() {
        // A zero-weight decoder reconstructs the same constant image for
        // every sample, so all m rewards coincide (epsilon = 0) and the
        // update must vanish for every sigma mode.
        let (arch, enc, dec, mut cfg) = toy_setup(11);
        let mut dec = dec;
        for t in dec.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let batch = toy_images(3, &arch, 12);
        let channel = ChannelConfig::awgn(10.0);

        for mode in [SigmaMode::Constant, SigmaMode::Annealed, SigmaMode::Learnable] {
            cfg.sigma_mode = mode;
            let schedule = SigmaSchedule {
                mode,
                sigma0: 0.1,
            };
            let mut enc_run = enc.clone();
            let mut opt = Optimizer::new(OptimizerKind::Sgd, cfg.learning_rate);
            let ctx = StepCtx {
                seed: 13,
                epoch: 1,
                step: 0,
                total_epochs: 1,
            };
            let path = ChannelAndDecoder {
                channel: &channel,
                decoder: &dec,
            };
            train_tx_step(&batch, &mut enc_run, &path, &schedule, &cfg, &mut opt, &ctx).unwrap();
            assert_eq!(enc_run, enc, "sigma mode {mode:?}");
        }
    }

    #[test]
    fn tx_step_is_deterministic() {
        let (arch, enc, dec, cfg) = toy_setup(14);
        let batch = toy_images(2, &arch, 15);
        let channel = ChannelConfig::awgn(10.0);
        let schedule = SigmaSchedule {
            mode: SigmaMode::Constant,
            sigma0: 0.1,
        };
        let run = |enc_in: &EncoderParams| {
            let mut enc_run = enc_in.clone();
            let mut opt = Optimizer::new(OptimizerKind::Sgd, cfg.learning_rate);
            let ctx = StepCtx {
                seed: 16,
                epoch: 1,
                step: 0,
                total_epochs: 1,
            };
            let path = ChannelAndDecoder {
                channel: &channel,
                decoder: &dec,
            };
            train_tx_step(&batch, &mut enc_run, &path, &schedule, &cfg, &mut opt, &ctx).unwrap();
            enc_run
        };
        let a = run(&enc);
        let b = run(&enc);
        assert_eq!(a, b);
        assert_ne!(a, enc, "a real step should move parameters");
    }

    #[test]
    fn tx_memorization_toy_improves_reward_trend() {
        // 10-image toy, noiseless channel: windowed mean rewards must climb.
        let arch = ArchConfig {
            height: 8,
            width: 8,
            channels: 1,
            conv_channels: vec![8],
            n_bits: 64,
        };
        let (mut enc, mut dec) = init_params(&arch, 20).unwrap();
        let images = toy_images(10, &arch, 21);
        let channel = ChannelConfig::noiseless(crate::channel::ChannelKind::Awgn);
        let cfg = TrainConfig {
            batch_size: 10,
            learning_rate: 2e-3,
            samples: 5,
            epochs: 1,
            sparsity_weight: 0.0,
            sigma_mode: SigmaMode::Constant,
            sigma0: 0.1,
            rx_mode: RxMode::DirectBackprop,
            optimizer: OptimizerKind::Adam,
            tx_optimizer: None,
            tx_learning_rate: None,
            seed: 22,
            checkpoint_interval: 0,
            eval_count: 10,
        };
        let schedule = SigmaSchedule {
            mode: SigmaMode::Constant,
            sigma0: 0.1,
        };
        let mut opt_enc = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate);
        let mut opt_dec = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate);
        let mut rewards = Vec::new();
        for step in 0..200 {
            let ctx = StepCtx {
                seed: 22,
                epoch: 1 + step,
                step: 0,
                total_epochs: 200,
            };
            // Keep the decoder co-adapting so TX improvements are visible.
            let stats = {
                let path = ChannelAndDecoder {
                    channel: &channel,
                    decoder: &dec,
                };
                train_tx_step(&images, &mut enc, &path, &schedule, &cfg, &mut opt_enc, &ctx)
                    .unwrap()
            };
            rewards.push(stats.mean_reward);
            train_rx_step(
                &images, &enc, &mut dec, &channel, &schedule, &cfg, &mut opt_dec, &ctx,
            )
            .unwrap();
        }
        let window = |range: std::ops::Range<usize>| -> f64 {
            rewards[range.clone()].iter().sum::<f64>() / range.len() as f64
        };
        let first = window(0..20);
        let last = window(180..200);
        assert!(
            last > first,
            "reward trend must improve: first window {first}, last window {last}"
        );
        // Monotone over 20-step windows up to small noise: check the
        // overall staircase never regresses by more than a hair.
        let means: Vec<f64> = (0..10).map(|w| window(w * 20..(w + 1) * 20)).collect();
        for pair in means.windows(2) {
            assert!(
                pair[1] > pair[0] - 0.01,
                "window means regressed: {means:?}"
            );
        }
    }

    #[test]
    fn rx_modes_both_reduce_l1_on_frozen_tx() {
        let arch = toy_arch();
        let (enc, dec0) = init_params(&arch, 30).unwrap();
        let images = toy_images(6, &arch, 31);
        let channel = ChannelConfig::awgn(15.0);
        for mode in [RxMode::DirectBackprop, RxMode::SelfCritic] {
            let cfg = TrainConfig {
                batch_size: 6,
                learning_rate: 5e-3,
                samples: 5,
                epochs: 1,
                sparsity_weight: 0.0,
                sigma_mode: SigmaMode::Constant,
                sigma0: 0.05,
                rx_mode: mode,
                optimizer: OptimizerKind::Adam,
                tx_optimizer: None,
                tx_learning_rate: None,
                seed: 32,
                checkpoint_interval: 0,
                eval_count: 6,
            };
            let schedule = SigmaSchedule {
                mode: SigmaMode::Constant,
                sigma0: 0.05,
            };
            let mut dec = dec0.clone();
            let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate);
            let mut first_l1 = 0.0;
            let mut last_l1 = 0.0;
            for step in 0..100 {
                let ctx = StepCtx {
                    seed: 32,
                    epoch: 1 + step,
                    step: 0,
                    total_epochs: 100,
                };
                let stats = train_rx_step(
                    &images, &enc, &mut dec, &channel, &schedule, &cfg, &mut opt, &ctx,
                )
                .unwrap();
                if step == 0 {
                    first_l1 = stats.mean_l1;
                }
                last_l1 = stats.mean_l1;
            }
            assert!(
                last_l1 < first_l1,
                "{mode:?}: L1 {first_l1} -> {last_l1} did not decrease"
            );
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_m() {
        let mut cfg = TrainConfig::default();
        cfg.samples = 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.samples = 2;
        assert!(cfg.validate().is_ok());
    }

    // --- epoch-level driver -------------------------------------------------

    fn desk_toy_cfg(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            learning_rate: 1e-3,
            samples: 3,
            epochs,
            sparsity_weight: 0.05,
            sigma_mode: SigmaMode::Constant,
            sigma0: 0.1,
            rx_mode: RxMode::DirectBackprop,
            optimizer: OptimizerKind::Adam,
            tx_optimizer: None,
            tx_learning_rate: None,
            seed,
            checkpoint_interval: 0,
            eval_count: 4,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let arch = toy_arch();
        let samples = toy_images(4, &arch, 40);
        let (enc0, dec0) = init_params(&arch, 41).unwrap();
        let mut cfg = desk_toy_cfg(41, 0);
        cfg.optimizer = OptimizerKind::Sgd;
        let (enc, dec, records) =
            train_alternate(&samples, &arch, ChannelConfig::awgn(10.0), cfg, |_, _| Ok(()))
                .unwrap();
        assert!(records.is_empty());
        assert_eq!(enc, enc0);
        assert_eq!(dec, dec0);
    }

    #[test]
    fn one_record_per_epoch() {
        let arch = toy_arch();
        let samples = toy_images(6, &arch, 42);
        let cfg = desk_toy_cfg(43, 3);
        let mut seen = 0;
        let (_, _, records) = train_alternate(
            &samples,
            &arch,
            ChannelConfig::awgn(10.0),
            cfg,
            |record, _| {
                seen += 1;
                assert_eq!(record.epoch, seen);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(seen, 3);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let arch = toy_arch();
        let samples = toy_images(6, &arch, 44);
        let channel = ChannelConfig::awgn(12.0);
        let cfg = desk_toy_cfg(45, 3);

        // Uninterrupted reference run.
        let (enc_a, dec_a, records_a) =
            train_alternate(&samples, &arch, channel, cfg.clone(), |_, _| Ok(())).unwrap();

        // Interrupted run: 1 epoch, checkpoint, resume for 2 more.
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("mid.ssbc");
        let mut first = Trainer::new(&arch, channel, {
            let mut c = cfg.clone();
            c.epochs = 1;
            c
        })
        .unwrap();
        first.run(&samples, |_, _| Ok(())).unwrap();
        first.save(&ckpt).unwrap();

        let mut resumed = Trainer::from_checkpoint(&ckpt, channel, cfg).unwrap();
        assert_eq!(resumed.completed_epochs, 1);
        let records_b = resumed.run(&samples, |_, _| Ok(())).unwrap();

        assert_eq!(records_b.len(), 2);
        assert_eq!(records_a[1].csv_row(), records_b[0].csv_row());
        assert_eq!(records_a[2].csv_row(), records_b[1].csv_row());
        assert_eq!(enc_a, resumed.enc);
        assert_eq!(dec_a, resumed.dec);
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let arch = toy_arch();
        let samples = toy_images(5, &arch, 46);
        let cfg = desk_toy_cfg(47, 2);
        let rows = |records: &[RunRecord]| -> Vec<String> {
            records.iter().map(RunRecord::csv_row).collect()
        };
        let (enc_a, _, rec_a) = train_alternate(
            &samples,
            &arch,
            ChannelConfig::awgn(10.0),
            cfg.clone(),
            |_, _| Ok(()),
        )
        .unwrap();
        let (enc_b, _, rec_b) =
            train_alternate(&samples, &arch, ChannelConfig::awgn(10.0), cfg, |_, _| Ok(()))
                .unwrap();
        assert_eq!(rows(&rec_a), rows(&rec_b));
        assert_eq!(enc_a, enc_b);
    }

    #[test]
    fn shuffle_is_deterministic_and_epoch_dependent() {
        let a = shuffled_indices(100, 1, 1);
        let b = shuffled_indices(100, 1, 1);
        let c = shuffled_indices(100, 1, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
