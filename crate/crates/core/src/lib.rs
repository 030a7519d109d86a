//! Differentiable dictionary search (DDS) for spectrogram decomposition.
//!
//! The crate is `no_std` (with `alloc`) and covers the numerical side only:
//!
//! - [`signal`]: synthetic harmonic sources, Hann-windowed log-magnitude STFT,
//!   piano-roll quantization and silent-frame removal.
//! - [`flows`]: invertible dictionary models (RealNVP-style single-source flows
//!   and a Glow-style conditional flow) with exact log-determinants and
//!   hand-written reverse-mode gradients.
//! - [`train`]: Adam, finite-difference gradient checks and the training loops.
//! - [`decompose`]: the overcomplete NMF baseline and the three DDS solvers.
//! - [`metrics`]: PSA, L0-epsilon sparsity and reconstruction error.
//!
//! File formats, timing and the command-line interface live in the `dds` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod decompose;
pub mod error;
pub mod flows;
pub mod matrix;
pub mod metrics;
pub mod real;
pub mod rng;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use real::Real;
