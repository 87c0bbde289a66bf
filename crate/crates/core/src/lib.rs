//! Core library for skeleton motion forecasting with calibrated uncertainty.
//!
//! Everything in this crate is pure computation over `f64` buffers: no IO, no
//! file formats, no threads. The companion `kinecast` crate layers the CLI and
//! the on-disk formats on top.
//!
//! The main pieces, bottom up:
//!
//! - [`tensor`] / [`tape`] - dense row-major tensors and a reverse-mode
//!   autodiff tape over tensor-level primitives (matmul, causal convolution,
//!   layer normalization, softmax, ...).
//! - [`dct`], [`eig`], [`stats`], [`optim`], [`rng`] - the numeric substrate:
//!   orthonormal DCT-II, small symmetric eigendecomposition, chi-square
//!   quantiles, sample covariance, Adam, and counter-based splittable RNG
//!   streams.
//! - [`motion`] - kinematic trees, motion sequences, preprocessing, windowing,
//!   dataset splits, and a synthetic motion generator.
//! - [`gat`], [`tcn`], [`tgn`] - the forecasting network: graph-attention
//!   residual blocks operating in DCT trajectory space, dilated causal
//!   convolution blocks, and the combined encoder/decoder model with its
//!   training loop.
//! - [`ensemble`] - deep-ensemble training and Monte-Carlo dropout sampling.
//! - [`geometry`] - covariance ellipsoids around joints, swept error ellipses
//!   along segments, and containment/proximity queries.
//! - [`metrics`] - MPJPE and sample-diversity (APD) evaluation.
//!
//! The crate is `no_std`-compatible (with `alloc`); enable the `libm` feature
//! instead of the default `std` feature for freestanding builds.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("kinecast-core requires either the `std` or the `libm` feature");

pub mod dct;
pub mod eig;
pub mod ensemble;
pub mod error;
mod fmath;
pub mod gat;
pub mod geometry;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tcn;
pub mod tensor;
pub mod tgn;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Stabilizer added to the variance inside layer normalization. Small enough
/// that normalized non-constant rows keep unit variance to well under 1e-8.
pub const LN_EPS: f64 = 1e-10;

/// Forward-pass mode for blocks with dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Dropout active at each block's configured rate.
    Train,
    /// Dropout off; deterministic.
    Eval,
    /// Monte-Carlo sampling: dropout active at `rate` in every block,
    /// overriding the configured rates.
    Mc { rate: f64 },
}

impl Mode {
    /// The dropout rate a block should apply, or `None` when dropout is off.
    pub fn dropout_rate(self, block_rate: f64) -> Option<f64> {
        match self {
            Mode::Train => Some(block_rate),
            Mode::Eval => None,
            Mode::Mc { rate } => Some(rate),
        }
    }
}
