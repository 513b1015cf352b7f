use serde::{Deserialize, Serialize};

use super::forward::log_loss;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half. Computed from a sort, but with integer pair counts so
/// the result is identical to brute-force pair enumeration.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&y| y > 0.5).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(ModelError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the number of correctly ordered pairs: 2 per strict win, 1 per tie.
    let mut doubled: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] > 0.5 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(doubled as f64 / (2 * positives * negatives) as f64)
}

/// Mean clipped cross-entropy.
pub fn mean_log_loss(scores: &[f64], labels: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores.iter().zip(labels).map(|(&p, &y)| log_loss(p, y)).sum();
    total / scores.len() as f64
}

/// AUC and logloss. With one class absent the AUC is undefined and
/// `DegenerateLabels` is returned together with the logloss.
pub fn evaluate_metrics(scores: &[f64], labels: &[f64]) -> Result<Metrics, (ModelError, f64)> {
    if scores.len() != labels.len() {
        return Err((ModelError::LengthMismatch(scores.len(), labels.len()), f64::NAN));
    }
    let logloss = mean_log_loss(scores, labels);
    match auc(scores, labels) {
        Ok(auc) => Ok(Metrics { auc, logloss }),
        Err(e) => Err((e, logloss)),
    }
}
