//! Adaptive polyphase sampling (APS) for exactly shift-invariant
//! convolutional networks, with the spectral oracles and measurement
//! harnesses used to check the invariance claims.
//!
//! Module map:
//! - [`tensor`]: rank-4 tensors, convolution and friends, their gradients
//! - [`polyphase`]: polyphase components, APS selection and sampling
//! - [`antialias`]: binomial blur, BlurPool and APS-j
//! - [`network`]: small residual CNNs with pluggable downsampling
//! - [`spectral`]: DFT oracles for the 1-D sampling identities
//! - [`metrics`]: consistency, accuracy, stability, OOD perturbations
//! - [`experiments`]: synthetic data, training, timing
//! - [`cli`]: the `apsnet` command-line front end

pub mod antialias;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod network;
pub mod polyphase;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
