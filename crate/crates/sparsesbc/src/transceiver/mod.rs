//! Transmitter and receiver models.
//!
//! The transmitter stacks strided convolutions with LeakyReLU to produce an
//! M-length embedding, then a fully connected quantizer layer with Tanh
//! whose output is binarized into the N-length transmission payload. The
//! receiver mirrors it: a fully connected dequantizer with Tanh back to an
//! M-length embedding, then transposed convolutions ending in a sigmoid so
//! reconstructions land in [0, 1].

mod checkpoint;

pub use checkpoint::{ensure_arch, load_checkpoint, save_checkpoint, CheckpointMeta};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::NormalizedImage;
use crate::nn::{
    leaky_relu, leaky_relu_grad_from_output, sigmoid, sigmoid_grad_from_output,
    tanh_grad_from_output, Conv2d, ConvTranspose2d, Dense, Tensor, STRIDE,
};
use crate::rng::{self, domain};

/// Real-valued embedding of length M.
pub type Embedding = Vec<f64>;

/// Tanh output of the quantizer layer, length N, components in (-1, 1).
/// This is the mean of the exploration Gaussian during training.
pub type PreQuantActivation = Vec<f64>;

/// Channel output, length N.
pub type ReceivedVector = Vec<f64>;

/// The N-length binary transmission payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Contract(format!("bit value {b} outside {{0,1}}")));
        }
        Ok(BitVector(bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Number of set bits.
    pub fn popcount(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }
}

/// Network shape: image geometry, conv channel widths, and payload length N.
///
/// Every conv halves the spatial size; the embedding length M is the
/// flattened output of the last conv.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    pub n_bits: usize,
}

impl ArchConfig {
    /// 32x32x3 images, conv widths 32/64/144 (M = 2304), N = 5000.
    pub fn cifar_default() -> Self {
        ArchConfig {
            height: 32,
            width: 32,
            channels: 3,
            conv_channels: vec![32, 64, 144],
            n_bits: 5000,
        }
    }

    /// Reduced CIFAR architecture: conv widths 16/32/36 (M = 576), N = 1000.
    pub fn desk_scale() -> Self {
        ArchConfig {
            height: 32,
            width: 32,
            channels: 3,
            conv_channels: vec![16, 32, 36],
            n_bits: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!(
                "channel count must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::Config("at least one conv layer required".into()));
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("conv channel widths must be positive".into()));
        }
        if self.n_bits == 0 {
            return Err(Error::Config("n_bits must be positive".into()));
        }
        let factor = STRIDE.pow(self.conv_channels.len() as u32);
        if self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Config(format!(
                "{} conv layers need dimensions divisible by {factor}, got {}x{}",
                self.conv_channels.len(),
                self.height,
                self.width
            )));
        }
        if self.height / factor == 0 || self.width / factor == 0 {
            return Err(Error::Config("conv stack collapses spatial dims to zero".into()));
        }
        Ok(())
    }

    /// Spatial shape after the conv stack: (channels, height, width).
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let factor = STRIDE.pow(self.conv_channels.len() as u32);
        (
            *self.conv_channels.last().expect("validated non-empty"),
            self.height / factor,
            self.width / factor,
        )
    }

    /// Embedding length M.
    pub fn embedding_len(&self) -> usize {
        let (c, h, w) = self.latent_shape();
        c * h * w
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Transmitter parameters (the conv stack and the quantizer layer).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: ArchConfig,
    pub convs: Vec<Conv2d>,
    pub quantizer: Dense,
}

/// Receiver parameters (the dequantizer layer and the deconv stack).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub arch: ArchConfig,
    pub dequantizer: Dense,
    pub deconvs: Vec<ConvTranspose2d>,
}

/// Gradients share the parameter layout exactly.
pub type EncoderGrads = EncoderParams;
pub type DecoderGrads = DecoderParams;

impl EncoderParams {
    pub fn zeros_like(&self) -> EncoderGrads {
        EncoderParams {
            arch: self.arch.clone(),
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            quantizer: self.quantizer.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("enc.conv{i}.w"), &conv.w));
            out.push((format!("enc.conv{i}.b"), &conv.b));
        }
        out.push(("enc.quantizer.w".to_string(), &self.quantizer.w));
        out.push(("enc.quantizer.b".to_string(), &self.quantizer.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for conv in &mut self.convs {
            out.push(&mut conv.w);
            out.push(&mut conv.b);
        }
        out.push(&mut self.quantizer.w);
        out.push(&mut self.quantizer.b);
        out
    }

    pub fn accumulate(&mut self, other: &EncoderGrads) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.w.add_assign(&b.w);
            a.b.add_assign(&b.b);
        }
        self.quantizer.w.add_assign(&other.quantizer.w);
        self.quantizer.b.add_assign(&other.quantizer.b);
    }

    pub fn scale(&mut self, factor: f64) {
        for conv in &mut self.convs {
            conv.w.scale(factor);
            conv.b.scale(factor);
        }
        self.quantizer.w.scale(factor);
        self.quantizer.b.scale(factor);
    }

    pub fn is_finite(&self) -> bool {
        self.convs.iter().all(|c| c.w.is_finite() && c.b.is_finite())
            && self.quantizer.w.is_finite()
            && self.quantizer.b.is_finite()
    }
}

impl DecoderParams {
    pub fn zeros_like(&self) -> DecoderGrads {
        DecoderParams {
            arch: self.arch.clone(),
            dequantizer: self.dequantizer.zeros_like(),
            deconvs: self.deconvs.iter().map(ConvTranspose2d::zeros_like).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push(("dec.dequantizer.w".to_string(), &self.dequantizer.w));
        out.push(("dec.dequantizer.b".to_string(), &self.dequantizer.b));
        for (i, deconv) in self.deconvs.iter().enumerate() {
            out.push((format!("dec.deconv{i}.w"), &deconv.w));
            out.push((format!("dec.deconv{i}.b"), &deconv.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.push(&mut self.dequantizer.w);
        out.push(&mut self.dequantizer.b);
        for deconv in &mut self.deconvs {
            out.push(&mut deconv.w);
            out.push(&mut deconv.b);
        }
        out
    }

    pub fn accumulate(&mut self, other: &DecoderGrads) {
        self.dequantizer.w.add_assign(&other.dequantizer.w);
        self.dequantizer.b.add_assign(&other.dequantizer.b);
        for (a, b) in self.deconvs.iter_mut().zip(&other.deconvs) {
            a.w.add_assign(&b.w);
            a.b.add_assign(&b.b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.dequantizer.w.scale(factor);
        self.dequantizer.b.scale(factor);
        for deconv in &mut self.deconvs {
            deconv.w.scale(factor);
            deconv.b.scale(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dequantizer.w.is_finite()
            && self.dequantizer.b.is_finite()
            && self.deconvs.iter().all(|d| d.w.is_finite() && d.b.is_finite())
    }
}

/// Deterministic fan-in-scaled uniform initialization of both models.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<(EncoderParams, DecoderParams)> {
    arch.validate()?;
    let mut rng = rng::stream(seed, domain::INIT, &[]);
    let m = arch.embedding_len();
    let n = arch.n_bits;

    let mut convs = Vec::new();
    let mut in_ch = arch.channels;
    for &out_ch in &arch.conv_channels {
        convs.push(Conv2d::init(out_ch, in_ch, &mut rng));
        in_ch = out_ch;
    }
    let quantizer = Dense::init(n, m, &mut rng);
    let encoder = EncoderParams {
        arch: arch.clone(),
        convs,
        quantizer,
    };

    let dequantizer = Dense::init(m, n, &mut rng);
    let mut deconvs = Vec::new();
    let mut channels: Vec<usize> = arch.conv_channels.clone();
    channels.reverse();
    channels.push(arch.channels);
    for pair in channels.windows(2) {
        deconvs.push(ConvTranspose2d::init(pair[0], pair[1], &mut rng));
    }
    let decoder = DecoderParams {
        arch: arch.clone(),
        dequantizer,
        deconvs,
    };
    Ok((encoder, decoder))
}

/// Forward activations kept for the backward pass.
pub struct EncoderTrace {
    /// Post-LeakyReLU output of each conv, last one doubling as the embedding.
    pub conv_outputs: Vec<Vec<f64>>,
    /// Tanh output of the quantizer layer (length N).
    pub preact: PreQuantActivation,
}

impl EncoderTrace {
    pub fn embedding(&self) -> &[f64] {
        self.conv_outputs.last().expect("at least one conv layer")
    }
}

/// Full transmitter forward pass with cached activations.
pub fn encode_trace(img: &NormalizedImage, enc: &EncoderParams) -> Result<EncoderTrace> {
    let arch = &enc.arch;
    if img.shape() != (arch.height, arch.width, arch.channels) {
        return Err(Error::Contract(format!(
            "image shape {:?} does not match architecture {:?}",
            img.shape(),
            (arch.height, arch.width, arch.channels)
        )));
    }
    let mut conv_outputs = Vec::with_capacity(enc.convs.len());
    let (mut h, mut w) = (arch.height, arch.width);
    let mut current: &[f64] = img.data();
    for conv in &enc.convs {
        let mut out = conv.forward(current, h, w);
        for v in &mut out {
            *v = leaky_relu(*v);
        }
        conv_outputs.push(out);
        current = conv_outputs.last().expect("just pushed");
        h /= STRIDE;
        w /= STRIDE;
    }
    let mut preact = enc.quantizer.forward(current);
    for v in &mut preact {
        *v = v.tanh();
    }
    Ok(EncoderTrace {
        conv_outputs,
        preact,
    })
}

/// Transmitter forward pass: embedding and pre-quantization activation.
pub fn encode(
    img: &NormalizedImage,
    enc: &EncoderParams,
) -> Result<(Embedding, PreQuantActivation)> {
    let trace = encode_trace(img, enc)?;
    Ok((trace.embedding().to_vec(), trace.preact.clone()))
}

/// Binary quantization: bit = 1 where the activation is strictly positive.
pub fn quantize(preact: &[f64]) -> BitVector {
    BitVector(preact.iter().map(|&a| u8::from(a > 0.0)).collect())
}

/// Backpropagates an upstream gradient at the pre-quantization activation
/// through the transmitter, accumulating parameter gradients into `grads`.
pub fn encoder_backward(
    img: &NormalizedImage,
    enc: &EncoderParams,
    trace: &EncoderTrace,
    d_preact: &[f64],
    grads: &mut EncoderGrads,
) {
    let arch = &enc.arch;
    debug_assert_eq!(d_preact.len(), arch.n_bits);

    // Through Tanh of the quantizer layer.
    let d_fc: Vec<f64> = d_preact
        .iter()
        .zip(&trace.preact)
        .map(|(g, y)| g * tanh_grad_from_output(*y))
        .collect();
    let embedding = trace.embedding();
    let mut d_prev = vec![0.0; embedding.len()];
    enc.quantizer
        .backward(embedding, &d_fc, &mut grads.quantizer, Some(&mut d_prev));

    // Through the conv stack, last to first.
    let depth = enc.convs.len();
    let factor = STRIDE.pow(depth as u32);
    let (mut h, mut w) = (arch.height / factor, arch.width / factor);
    let mut d_out = d_prev;
    for l in (0..depth).rev() {
        // LeakyReLU derivative from the cached post-activation.
        for (g, y) in d_out.iter_mut().zip(&trace.conv_outputs[l]) {
            *g *= leaky_relu_grad_from_output(*y);
        }
        let input: &[f64] = if l == 0 {
            img.data()
        } else {
            &trace.conv_outputs[l - 1]
        };
        let (ih, iw) = (h * STRIDE, w * STRIDE);
        if l == 0 {
            enc.convs[l].backward(input, ih, iw, &d_out, &mut grads.convs[l], None);
        } else {
            let mut d_in = vec![0.0; input.len()];
            enc.convs[l].backward(input, ih, iw, &d_out, &mut grads.convs[l], Some(&mut d_in));
            d_out = d_in;
        }
        h = ih;
        w = iw;
    }
}

/// Forward activations of the receiver kept for the backward pass.
pub struct DecoderTrace {
    /// Tanh output of the dequantizer layer (length M).
    pub dq_out: Vec<f64>,
    /// Post-activation output of each deconv; the last entry is the sigmoid
    /// reconstruction in [0, 1].
    pub deconv_outputs: Vec<Vec<f64>>,
}

impl DecoderTrace {
    pub fn output(&self) -> &[f64] {
        self.deconv_outputs.last().expect("at least one deconv")
    }
}

/// Receiver dequantizer: Tanh(FC(y)), length M. No binarization here.
pub fn dequantize(received: &[f64], dec: &DecoderParams) -> Result<Embedding> {
    if received.len() != dec.arch.n_bits {
        return Err(Error::Contract(format!(
            "received vector length {} does not match N = {}",
            received.len(),
            dec.arch.n_bits
        )));
    }
    let mut out = dec.dequantizer.forward(received);
    for v in &mut out {
        *v = v.tanh();
    }
    Ok(out)
}

/// Receiver deconvolution stack from an M-length embedding, with traces.
pub fn decode_trace_from_embedding(
    embedding: &[f64],
    dec: &DecoderParams,
) -> Result<Vec<Vec<f64>>> {
    let arch = &dec.arch;
    if embedding.len() != arch.embedding_len() {
        return Err(Error::Contract(format!(
            "embedding length {} does not match M = {}",
            embedding.len(),
            arch.embedding_len()
        )));
    }
    let (_, mut h, mut w) = arch.latent_shape();
    let depth = dec.deconvs.len();
    let mut outputs = Vec::with_capacity(depth);
    let mut current: &[f64] = embedding;
    for (l, deconv) in dec.deconvs.iter().enumerate() {
        let mut out = deconv.forward(current, h, w);
        if l + 1 == depth {
            for v in &mut out {
                *v = sigmoid(*v);
            }
        } else {
            for v in &mut out {
                *v = leaky_relu(*v);
            }
        }
        outputs.push(out);
        current = outputs.last().expect("just pushed");
        h *= STRIDE;
        w *= STRIDE;
    }
    Ok(outputs)
}

/// Full receiver forward pass from a received vector, with cached activations.
pub fn decode_trace(received: &[f64], dec: &DecoderParams) -> Result<DecoderTrace> {
    let dq_out = dequantize(received, dec)?;
    let deconv_outputs = decode_trace_from_embedding(&dq_out, dec)?;
    Ok(DecoderTrace {
        dq_out,
        deconv_outputs,
    })
}

/// Receiver reconstruction from an M-length embedding.
pub fn decode(embedding: &[f64], dec: &DecoderParams) -> Result<NormalizedImage> {
    let outputs = decode_trace_from_embedding(embedding, dec)?;
    let arch = &dec.arch;
    NormalizedImage::new(
        arch.height,
        arch.width,
        arch.channels,
        outputs.last().expect("at least one deconv").clone(),
    )
}

/// Backpropagates an upstream gradient at the reconstruction through the
/// receiver, accumulating parameter gradients into `grads`.
///
/// Returns nothing extra: the gradient w.r.t. the received vector is never
/// needed (nothing upstream of the channel is trained from the RX side).
pub fn decoder_backward(
    received: &[f64],
    dec: &DecoderParams,
    trace: &DecoderTrace,
    d_output: &[f64],
    grads: &mut DecoderGrads,
) {
    let arch = &dec.arch;
    debug_assert_eq!(d_output.len(), arch.image_len());
    let depth = dec.deconvs.len();
    let (_, lat_h, lat_w) = arch.latent_shape();

    let mut d_out: Vec<f64> = d_output
        .iter()
        .zip(trace.output())
        .map(|(g, y)| g * sigmoid_grad_from_output(*y))
        .collect();

    for l in (0..depth).rev() {
        if l + 1 != depth {
            for (g, y) in d_out.iter_mut().zip(&trace.deconv_outputs[l]) {
                *g *= leaky_relu_grad_from_output(*y);
            }
        }
        let input: &[f64] = if l == 0 {
            &trace.dq_out
        } else {
            &trace.deconv_outputs[l - 1]
        };
        let (ih, iw) = (lat_h << l, lat_w << l);
        let mut d_in = vec![0.0; input.len()];
        dec.deconvs[l].backward(input, ih, iw, &d_out, &mut grads.deconvs[l], Some(&mut d_in));
        d_out = d_in;
    }

    // Through Tanh of the dequantizer layer.
    for (g, y) in d_out.iter_mut().zip(&trace.dq_out) {
        *g *= tanh_grad_from_output(*y);
    }
    dec.dequantizer
        .backward(received, &d_out, &mut grads.dequantizer, None);
}
