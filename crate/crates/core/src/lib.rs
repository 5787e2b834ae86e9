//! Formulaic alpha factors and gated deep MLPs for predicting the sign of
//! future stock excess returns.
//!
//! The crate is organized as a pipeline:
//!
//! * [`panel`]: market panels (OHLCV + vwap/returns/cap), CSV ingest, excess
//!   return labels and CAPM-style decomposition, synthetic data.
//! * [`alpha`]: a small expression language over panel fields, evaluated
//!   cross-sectionally into standardized factor matrices.
//! * [`nn`]: dense layers, batch norm, dropout, gated activations, losses and
//!   Adam, all on a flat row-major tensor type with hand-written backward
//!   passes.
//! * [`model`]: the five reference architectures built from those layers.
//! * [`train`]: date-based splits, the training loop, ROC-AUC and run
//!   artifacts.

// Grid code walks (date, ticker) indices across several parallel arrays at
// once; iterator rewrites of those loops hide the alignment.
#![allow(clippy::needless_range_loop)]

pub mod alpha;
pub mod model;
pub mod nn;
pub mod panel;
pub mod rng;
pub mod tensor;
pub mod train;

pub use tensor::Tensor2;
