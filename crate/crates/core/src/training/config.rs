// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::Variant;

/// Optimizer, regularization and split settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of the training titles carved off for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    /// MLP bottleneck width; ignored by the other variants.
    pub bottleneck_m: usize,
}

impl TrainConfig {
    /// Published defaults: Layer-LR lr 2e-3, Layer-MLP lr 1e-3 with m = 64;
    /// both wd 1e-3, dropout 0.1, batch 64, 100 epochs, patience 3, 15 %
    /// validation titles, seed 42. Final-LR uses no dropout.
    pub fn for_variant(variant: Variant) -> Self {
        let base = Self {
            variant,
            learning_rate: 2e-3,
            weight_decay: 1e-3,
            dropout: 0.1,
            batch_size: 64,
            max_epochs: 100,
            patience: 3,
            val_fraction: 0.15,
            seed: 42,
            bottleneck_m: 64,
        };
        match variant {
            Variant::LayerLr => base,
            Variant::LayerMlp => Self { learning_rate: 1e-3, ..base },
            Variant::FinalLr => Self { dropout: 0.0, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.variant == Variant::FinalLr && self.dropout != 0.0 {
            return bad("final-lr has no dropout".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch size, max epochs and patience must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.variant == Variant::LayerMlp && self.bottleneck_m == 0 {
            return bad("bottleneck size must be positive".into());
        }
        Ok(())
    }
}
