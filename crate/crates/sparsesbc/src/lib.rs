//! SparseSBC: an alternately trained sparse semantic communication system
//! for image and video transmission.
//!
//! A convolutional transmitter encodes images into sparse binary payloads,
//! a simulated AWGN or phase-invariant-fading channel corrupts them, and a
//! deconvolutional receiver reconstructs the images. Transmitter and
//! receiver are trained in turns — never jointly — with a self-critic
//! Gaussian policy gradient, so no gradient ever crosses the channel.

pub mod channel;
pub mod config;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod trainer;
pub mod transceiver;
pub mod video;

pub use error::{Error, Result};
