//! From-scratch network layers with explicit forward/backward passes.
//!
//! Everything runs on [`Tensor2`]: row-major batches with a paired gradient
//! buffer. Layers cache whatever their backward pass needs during forward;
//! backward accumulates parameter gradients in place and returns the input
//! gradient. No graph, no autodiff: each composite (the feedforward block,
//! the gated layer, the models above this module) spells out its chain rule,
//! and every one of them is held to a finite-difference oracle in tests.

mod adam;
mod batchnorm;
mod block;
mod dropout;
mod gated;
mod linear;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::BatchNormLayer;
pub use block::FeedForwardBlock;
pub use dropout::DropoutLayer;
pub use gated::GatedActivationLayer;
pub use linear::LinearLayer;
pub use loss::{bce_loss, cosine_similarity, ic_loss, IcMode};

use thiserror::Error;

use crate::tensor::Tensor2;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("batch norm train mode needs a batch of at least 2 rows, got {0}")]
    SmallBatch(usize),
    #[error("backward called without a cached train-mode forward")]
    MissingCache,
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadDropoutRate(f64),
    #[error("gate reduction {k} must divide width {d}")]
    BadGateDivisor { d: usize, k: usize },
    #[error("cosine similarity is undefined for a zero-magnitude vector")]
    ZeroVector,
    #[error("cross-sectional loss needs at least 2 rows (stocks) per date, got {0}")]
    SmallCrossSection(usize),
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGrad(String),
}

/// Train/inference switch for layers whose behavior differs between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Uniform access to a component's tensors for the optimizer, checkpointing,
/// and parameter counting. Visit order is stable.
pub trait TensorVisit {
    /// Trainable parameters.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2));

    /// Non-trainable buffers that belong in checkpoints (running statistics).
    fn visit_state(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor2)) {}
}

/// Joins a visitor prefix and a leaf name, skipping the dot at the root.
pub fn qualify(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Total trainable scalar count.
pub fn param_count<M: TensorVisit>(model: &mut M) -> usize {
    let mut n = 0;
    model.visit_params("", &mut |_, t| n += t.len());
    n
}

/// Clears accumulated parameter gradients.
pub fn zero_grads<M: TensorVisit>(model: &mut M) {
    model.visit_params("", &mut |_, t| t.zero_grad());
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn relu_forward(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where the activation was positive. `reference` may be the
/// forward input or the forward output: both are positive at the same cells.
pub fn relu_backward(reference: &Tensor2, g: &Tensor2) -> Tensor2 {
    assert_eq!(reference.shape(), g.shape(), "relu backward shapes");
    let data = reference
        .data()
        .iter()
        .zip(g.data())
        .map(|(&r, &gv)| if r > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor2::from_vec(g.rows(), g.cols(), data)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Central finite differences of a scalar function at `x`.
    pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            out.push((up - down) / (2.0 * h));
        }
        out
    }

    /// Largest per-element relative error, with a floor on the denominator so
    /// finite-difference noise on near-zero gradients does not dominate.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / f64::max(1e-3, f64::max(a.abs(), n.abs())))
            .fold(0.0, f64::max)
    }

    /// Fixed random projection turning a tensor-valued forward pass into a
    /// scalar loss: L = sum(c .* y). The matching upstream gradient is `c`.
    pub fn projection(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Tensor2 {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor2::from_vec(rows, cols, data)
    }

    pub fn weighted_sum(y: &Tensor2, c: &Tensor2) -> f64 {
        y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    }
}
