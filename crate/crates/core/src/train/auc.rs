//! ROC-AUC via the rank-sum identity.

use super::TrainError;

/// Probability that a uniformly random positive outranks a uniformly random
/// negative, ties counted half. Computed from one sort with tied scores
/// sharing their average rank, so heavy ties cost nothing extra.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, TrainError> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length");
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TrainError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TrainError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut k = i + 1;
        while k < order.len() && scores[order[k]] == scores[order[i]] {
            k += 1;
        }
        // 1-based ranks i+1 ..= k share the run average (i + 1 + k) / 2
        let rank = (i + 1 + k) as f64 / 2.0;
        for &s in &order[i..k] {
            if labels[s] != 0 {
                rank_sum += rank;
            }
        }
        i = k;
    }

    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}
