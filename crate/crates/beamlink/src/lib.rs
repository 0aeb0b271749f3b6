//! Differentiable TDD MIMO link-level simulator with learned
//! channel-prediction beamforming.
//!
//! The crate covers the full loop: tapped-delay-line channel generation,
//! an OFDM physical-layer chain (mapping, pilots, LS estimation, LMMSE
//! equalization, soft demapping), zero-forcing beamforming with a Neumann
//! series approximation, a dilated depthwise-separable ResNet channel
//! predictor, end-to-end training on downlink bit-detection loss, and a
//! Monte-Carlo evaluation harness.

pub mod autodiff;
pub mod beamforming;
pub mod channel;
pub mod config;
pub mod phy;
pub mod training;
pub mod error;
pub mod eval;
pub mod model;

pub use error::{Error, Result};
