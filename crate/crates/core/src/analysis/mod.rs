// SPDX-License-Identifier: MIT OR Apache-2.0

//! Metrics, PCA, layer-weight reports and mismatch statistics.

pub mod eval;
pub mod fisher;
pub mod layers;
pub mod metrics;
pub mod pca;

pub use eval::{evaluate_probe, mismatch_records, score_dataset, EvalReport, RecordScore};
pub use fisher::{
    fisher_exact, mismatch_analysis, relative_risk, ConditionResult, ContingencyTable, MismatchRecord,
    MismatchReport,
};
pub use layers::{gaussian_smooth, layer_weight_report, LayerWeightReport, DEFAULT_SMOOTHING_SIGMA};
pub use metrics::{compute_metrics, threshold_predictions, ClassMetrics, Metrics};
pub use pca::{pca_2d, pca_2d_with, PcaMethod, PcaResult};
