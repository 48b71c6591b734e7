// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{carve_validation, train_with_validation};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::probes::Variant;
use crate::store::Dataset;

/// Hyperparameter grid for the layer-aggregated probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Only enumerated for the MLP probe.
    pub bottleneck_m: Vec<usize>,
    pub epochs_per_config: usize,
}

impl Default for GridSpace {
    /// 3 dropout × 4 weight decay × 3 learning rates (× 2 widths for the MLP),
    /// 10 epochs per configuration.
    fn default() -> Self {
        Self {
            dropout: vec![0.0, 0.1, 0.2],
            weight_decay: vec![0.0, 5e-4, 1e-3, 2e-3],
            learning_rate: vec![5e-4, 1e-3, 2e-3],
            bottleneck_m: vec![64, 128],
            epochs_per_config: 10,
        }
    }
}

impl GridSpace {
    /// Configurations in enumeration order (dropout outermost, then weight
    /// decay, learning rate and bottleneck). Seeds are derived per index.
    pub fn configs(&self, variant: Variant, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        if variant == Variant::FinalLr {
            return Err(Error::InvalidConfig("grid search covers the layer-aggregated probes only".into()));
        }
        let widths: Vec<usize> = match variant {
            Variant::LayerMlp => self.bottleneck_m.clone(),
            _ => vec![base.bottleneck_m],
        };
        let mut out = Vec::new();
        for &dropout in &self.dropout {
            for &weight_decay in &self.weight_decay {
                for &learning_rate in &self.learning_rate {
                    for &bottleneck_m in &widths {
                        out.push(TrainConfig {
                            variant,
                            dropout,
                            weight_decay,
                            learning_rate,
                            bottleneck_m,
                            max_epochs: self.epochs_per_config,
                            seed: derive_seed(base.seed, out.len() as u64),
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub index: usize,
    pub config: TrainConfig,
    pub val_macro_f1: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best: TrainConfig,
    pub entries: Vec<GridEntry>,
}

/// Index of the entry with the highest validation macro-F1, ties broken by
/// validation accuracy and then by enumeration order.
pub fn select_best(entries: &[GridEntry]) -> Option<usize> {
    let mut best: Option<&GridEntry> = None;
    for e in entries {
        let better = match best {
            None => true,
            Some(b) => {
                e.val_macro_f1 > b.val_macro_f1
                    || (e.val_macro_f1 == b.val_macro_f1 && e.val_accuracy > b.val_accuracy)
            }
        };
        if better {
            best = Some(e);
        }
    }
    best.map(|e| e.index)
}

/// Trains every configuration against one shared title-aware validation split.
pub fn grid_search(
    dataset: &Dataset,
    space: &GridSpace,
    variant: Variant,
    base: &TrainConfig,
    exec: Execution,
) -> Result<GridResult> {
    let configs = space.configs(variant, base)?;
    if configs.is_empty() {
        return Err(Error::InvalidConfig("grid space is empty".into()));
    }
    let (train, val) = carve_validation(dataset, base.val_fraction, base.seed)?;
    let runs = exec.map(&configs, |cfg| train_with_validation(&train, &val, cfg));
    let mut entries = Vec::with_capacity(runs.len());
    for (index, (config, run)) in configs.into_iter().zip(runs).enumerate() {
        let run = run?;
        entries.push(GridEntry {
            index,
            config,
            val_macro_f1: run.summary.val_metrics.macro_f1,
            val_accuracy: run.summary.val_metrics.accuracy,
            best_epoch: run.summary.best_epoch,
            epochs_run: run.summary.history.len(),
        });
    }
    let best_index = select_best(&entries).expect("non-empty grid");
    Ok(GridResult { best_index, best: entries[best_index].config.clone(), entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(index: usize, f1: f64, acc: f64) -> GridEntry {
        GridEntry {
            index,
            config: TrainConfig::for_variant(Variant::LayerLr),
            val_macro_f1: f1,
            val_accuracy: acc,
            best_epoch: 1,
            epochs_run: 1,
        }
    }

    #[test]
    fn cardinalities() {
        let base = TrainConfig::for_variant(Variant::LayerLr);
        let space = GridSpace::default();
        assert_eq!(space.configs(Variant::LayerLr, &base).unwrap().len(), 36);
        assert_eq!(space.configs(Variant::LayerMlp, &base).unwrap().len(), 72);
        assert!(space.configs(Variant::FinalLr, &base).is_err());
        assert!(space.configs(Variant::LayerLr, &base).unwrap().iter().all(|c| c.max_epochs == 10));
    }

    #[test]
    fn accuracy_breaks_ties() {
        assert_eq!(select_best(&[entry(0, 0.8, 0.90), entry(1, 0.8, 0.92)]), Some(1));
        assert_eq!(select_best(&[entry(0, 0.8, 0.92), entry(1, 0.8, 0.92)]), Some(0));
        assert_eq!(select_best(&[entry(0, 0.7, 0.99), entry(1, 0.8, 0.5)]), Some(1));
        assert_eq!(select_best(&[entry(0, 0.7, 0.99)]), Some(0));
    }
}
