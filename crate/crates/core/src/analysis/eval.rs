// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::fisher::MismatchRecord;
use super::metrics::{compute_metrics, threshold_predictions, Metrics};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::probes::Probe;
use crate::store::{Dataset, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    pub label: Source,
    pub score: f64,
    pub predicted: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub metrics: Metrics,
    pub scores: Vec<RecordScore>,
}

pub fn check_compatible(probe: &Probe, dataset: &Dataset) -> Result<()> {
    if probe.hidden() != dataset.hidden() {
        return Err(Error::dims(format!("H={}", probe.hidden()), format!("H={}", dataset.hidden())));
    }
    if let Some(l) = probe.layers() {
        if l != dataset.layers() {
            return Err(Error::dims(format!("L={l}"), format!("L={}", dataset.layers())));
        }
    }
    Ok(())
}

/// Deterministic, dropout-free scores for every record.
pub fn score_dataset(probe: &Probe, dataset: &Dataset, exec: Execution) -> Result<Vec<f64>> {
    check_compatible(probe, dataset)?;
    exec.map(dataset.records(), |r| probe.score(&r.tensor)).into_iter().collect()
}

/// Scores every record and thresholds at `threshold` (`score ≥ threshold`
/// is parametric).
pub fn evaluate_probe(probe: &Probe, dataset: &Dataset, threshold: f64, exec: Execution) -> Result<EvalReport> {
    let scores = score_dataset(probe, dataset, exec)?;
    let predicted = threshold_predictions(&scores, threshold);
    let metrics = compute_metrics(&predicted, &dataset.labels())?;
    let scores = dataset
        .records()
        .iter()
        .zip(scores.into_iter().zip(predicted))
        .map(|(r, (score, predicted))| RecordScore { id: r.id.clone(), label: r.label, score, predicted })
        .collect();
    Ok(EvalReport { threshold, metrics, scores })
}

/// Pairs probe attributions with the `source_required` and `correct`
/// annotations. Records lacking either annotation are skipped; the count of
/// skipped records is returned alongside.
pub fn mismatch_records(
    probe: &Probe,
    dataset: &Dataset,
    threshold: f64,
    exec: Execution,
) -> Result<(Vec<MismatchRecord>, usize)> {
    let scores = score_dataset(probe, dataset, exec)?;
    let predicted = threshold_predictions(&scores, threshold);
    let mut out = Vec::new();
    let mut skipped = 0;
    for (r, p) in dataset.records().iter().zip(predicted) {
        match (r.source_required, r.correct) {
            (Some(source_required), Some(correct)) => {
                out.push(MismatchRecord { source_required, predicted: p, correct })
            }
            _ => skipped += 1,
        }
    }
    Ok((out, skipped))
}
