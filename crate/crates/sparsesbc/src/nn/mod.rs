//! Minimal dense/convolutional network machinery with hand-written
//! forward and backward passes.
//!
//! Everything runs in f64. Layers own their weights as shaped [`Tensor`]s;
//! gradients reuse the same layer types with identical shapes, so optimizer
//! and checkpoint code can walk parameters and gradients uniformly.

mod layers;
mod optim;

pub use layers::{Conv2d, ConvTranspose2d, Dense, KERNEL, PAD, STRIDE};
pub use optim::{AdamParams, Optimizer, OptimizerKind};

use rand::Rng;

/// A dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Fills with U(-a, a), a = 1/sqrt(fan_in).
    pub fn fill_fan_in_uniform(&mut self, fan_in: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut self.data {
            *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Slope-0.2 leaky rectifier.
#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Derivative of [`leaky_relu`] expressed through its output (valid because
/// the map is sign-preserving).
#[inline]
pub fn leaky_relu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        0.2
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Derivative of tanh through its output: 1 - y^2.
#[inline]
pub fn tanh_grad_from_output(y: f64) -> f64 {
    1.0 - y * y
}

/// Derivative of sigmoid through its output: y (1 - y).
#[inline]
pub fn sigmoid_grad_from_output(y: f64) -> f64 {
    y * (1.0 - y)
}
