//! Losses: binary cross-entropy on logits, cosine similarity, and the
//! factor-similarity (IC) loss over a per-date cross-section.

use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, NnError};
use crate::tensor::{matmul_nn, matmul_tn, Tensor2};

/// Mean of softplus(z) - y*z over the batch, with gradient (sigmoid(z)-y)/n.
/// Computed on logits throughout, so it cannot overflow for large |z|.
pub fn bce_loss(logits: &Tensor2, labels: &[f64]) -> (f64, Tensor2) {
    assert_eq!(logits.cols(), 1, "bce expects a single logit column");
    assert_eq!(logits.rows(), labels.len(), "bce batch sizes");
    assert!(!labels.is_empty(), "bce on an empty batch");
    debug_assert!(labels.iter().all(|&y| y == 0.0 || y == 1.0));
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(logits.rows(), 1);
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.get(i, 0);
        loss += softplus(z) - y * z;
        grad.set(i, 0, (sigmoid(z) - y) / n);
    }
    (loss / n, grad)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NnError> {
    assert_eq!(a.len(), b.len(), "cosine on unequal lengths");
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(NnError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// How the factor-similarity loss combines its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcMode {
    /// L = Σᵢ Sc(cᵢ, ret) − λ·Σ_{i≠j} Sc(cᵢ, cⱼ), minimized exactly as
    /// written (which rewards anti-correlation with returns and mutual
    /// similarity of factors).
    Literal,
    /// L = −Σᵢ |Sc(cᵢ, ret)| + λ·Σ_{i<j} |Sc(cᵢ, cⱼ)|: reward predictive
    /// alignment of every factor, penalize factor redundancy.
    #[default]
    Predictive,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Factor-similarity loss for one date. `features` columns are candidate
/// factors over M stocks; `future_excess` is the return vector they are
/// scored against. Returns the loss and its gradient w.r.t. `features`.
///
/// Zero-norm factor columns have no defined cosine; they contribute nothing
/// to either term and receive zero gradient (logged as a warning). A
/// zero-norm return vector likewise zeroes every alignment term.
pub fn ic_loss(
    features: &Tensor2,
    future_excess: &[f64],
    lambda: f64,
    mode: IcMode,
) -> Result<(f64, Tensor2), NnError> {
    let (m, n) = features.shape();
    if m < 2 {
        return Err(NnError::SmallCrossSection(m));
    }
    if future_excess.len() != m {
        return Err(NnError::Shape {
            op: "ic loss",
            left: (m, n),
            right: (future_excess.len(), 1),
        });
    }

    let mut norms = vec![0.0; n];
    for i in 0..m {
        for (j, &v) in features.row(i).iter().enumerate() {
            norms[j] += v * v;
        }
    }
    for (j, s) in norms.iter_mut().enumerate() {
        *s = s.sqrt();
        if *s == 0.0 {
            log::warn!("ic loss: factor column {j} has zero norm and is skipped");
        }
    }

    // Unit-normalized columns; zero-norm columns stay zero so they drop out
    // of every inner product below.
    let mut chat = Tensor2::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            if norms[j] > 0.0 {
                chat.set(i, j, features.get(i, j) / norms[j]);
            }
        }
    }
    let r_norm = future_excess.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r_norm == 0.0 {
        log::warn!("ic loss: return vector has zero norm; alignment terms vanish");
    }
    let rhat = Tensor2::from_vec(
        m,
        1,
        future_excess
            .iter()
            .map(|&v| if r_norm > 0.0 { v / r_norm } else { 0.0 })
            .collect(),
    );

    // s[i] = Sc(c_i, ret); gram[i][j] = Sc(c_i, c_j).
    let s = matmul_tn(&chat, &rhat);
    let gram = matmul_tn(&chat, &chat);

    let mut loss = 0.0;
    // alpha[i] = dL/ds_i; w[i][j] = dL/dgram_ij as a symmetric weight with
    // zero diagonal. Together they linearize both modes so one gradient
    // formula serves.
    let mut alpha = vec![0.0; n];
    let mut w = Tensor2::zeros(n, n);
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        let si = s.get(i, 0);
        match mode {
            IcMode::Literal => {
                loss += si;
                alpha[i] = 1.0;
            }
            IcMode::Predictive => {
                loss -= si.abs();
                alpha[i] = -sign(si);
            }
        }
        for j in 0..n {
            if j == i || norms[j] == 0.0 {
                continue;
            }
            let gij = gram.get(i, j);
            match mode {
                IcMode::Literal => {
                    loss -= lambda * gij;
                    w.set(i, j, -2.0 * lambda);
                }
                IcMode::Predictive => {
                    // Each unordered pair appears twice in this double loop.
                    loss += 0.5 * lambda * gij.abs();
                    w.set(i, j, lambda * sign(gij));
                }
            }
        }
    }

    // d Sc(c_i, x)/dc_i = (x̂ − Sc·ĉ_i)/‖c_i‖ for unit x̂; collecting terms:
    // grad col i = (α_i·r̂ + (ĈW)_i − β_i·ĉ_i)/‖c_i‖ with
    // β_i = α_i·s_i + Σ_j w_ij·gram_ij.
    let p = matmul_nn(&chat, &w);
    let mut beta = vec![0.0; n];
    for i in 0..n {
        let mut acc = alpha[i] * s.get(i, 0);
        for j in 0..n {
            acc += w.get(i, j) * gram.get(i, j);
        }
        beta[i] = acc;
    }
    let mut grad = Tensor2::zeros(m, n);
    for row in 0..m {
        for i in 0..n {
            if norms[i] == 0.0 {
                continue;
            }
            let v = (alpha[i] * rhat.get(row, 0) + p.get(row, i)
                - beta[i] * chat.get(row, i))
                / norms[i];
            grad.set(row, i, v);
        }
    }
    Ok((loss, grad))
}
