//! Core algorithms for latent-coordinate audio generation.
//!
//! The pipeline has three stages:
//!
//! 1. A two-level adversarial spectrogram autoencoder ([`autoencoder`])
//!    compresses waveforms into low-rate latent sequences. The decoder emits
//!    magnitude and phase spectrograms that are inverted with a differentiable
//!    iSTFT, so phase is modeled indirectly through magnitude realism.
//! 2. A latent GAN ([`gan`]) models level-2 latent sequences. The generator is
//!    conditioned on an anchor-interpolated coordinate system plus a global
//!    style vector, and is built padding-free so that patches generated from
//!    overlapping coordinate windows agree exactly on the overlap.
//! 3. A tiling engine ([`generation`]) builds arbitrarily long coordinate
//!    sequences, generates latent patches in parallel, and decodes them
//!    faster than real time on a CPU.
//!
//! Everything differentiable runs on the small tape autodiff engine in [`nn`];
//! gradients are verified against central finite differences.

pub mod audio;
pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gan;
pub mod generation;
pub mod nn;

pub use error::{Error, Result};
pub use nn::scalar::Scalar;
pub use nn::tensor::Tensor;
