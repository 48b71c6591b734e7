// SPDX-License-Identifier: MIT OR Apache-2.0

use super::ops::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// d(mean loss)/d(logit_i).
    pub grad: Vec<f64>,
}

/// Mean binary cross-entropy on logits with a positive-class multiplier:
/// `−[w·y·log σ(z) + (1−y)·log(1−σ(z))]`, evaluated through softplus.
pub fn bce_logits_loss(logits: &[f64], labels: &[f64], pos_weight: f64) -> LossOutput {
    debug_assert_eq!(logits.len(), labels.len());
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            loss += pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
            let s = sigmoid(z);
            (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n
        })
        .collect();
    LossOutput { loss: loss / n, grad }
}
