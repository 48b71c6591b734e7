// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Source;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Binary classification summary. Index 0 is contextual, index 1 parametric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: [ClassMetrics; 2],
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 2]; 2],
    pub n: usize,
}

impl Metrics {
    /// Binary F1 of the parametric (positive) class.
    pub fn positive_f1(&self) -> f64 {
        self.per_class[1].f1
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(predictions: &[Source], labels: &[Source]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::dims(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::InsufficientData("metrics need at least one example".into()));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, l) in predictions.iter().zip(labels) {
        confusion[l.label() as usize][p.label() as usize] += 1;
    }
    let per_class = [0usize, 1].map(|c| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let support = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        // Harmonic mean written on counts; 0 when the class is neither present nor predicted.
        let f1 = ratio(2 * tp, predicted + support);
        ClassMetrics { precision, recall, f1, support }
    });
    let n = labels.len();
    Ok(Metrics {
        macro_f1: (per_class[0].f1 + per_class[1].f1) / 2.0,
        accuracy: ratio(confusion[0][0] + confusion[1][1], n),
        per_class,
        confusion,
        n,
    })
}

/// `score ≥ threshold` → parametric.
pub fn threshold_predictions(scores: &[f64], threshold: f64) -> Vec<Source> {
    scores
        .iter()
        .map(|s| if *s >= threshold { Source::Parametric } else { Source::Contextual })
        .collect()
}
