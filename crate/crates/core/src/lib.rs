// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probing classifiers that attribute a generated answer to contextual
//! evidence or parametric memory, from per-layer hidden states.
//!
//! - [`store`]: the `ATRW` activation format, dataset validation and title-disjoint splits.
//! - [`probes`]: Final-LR, Layer-LR and Layer-MLP forward/backward passes and the `ATRP` probe format.
//! - [`training`]: AdamW, early stopping, the deterministic logistic solver and grid search.
//! - [`analysis`]: metrics, PCA, layer-weight curves and Fisher exact mismatch statistics.
//! - [`bias`]: TF-IDF lexical-bias audit with stratified cross-validation.
//! - [`synth`]: planted-signal datasets for testing.

pub mod analysis;
pub mod bias;
pub mod error;
pub mod exec;
pub mod probes;
pub mod store;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
pub use probes::{Probe, Variant};
pub use store::{ActivationRecord, Dataset, LayerStack, Source, TokenTag};
pub use training::{TrainConfig, TrainedProbe};
