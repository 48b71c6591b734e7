// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::config::TrainConfig;
use super::final_lr::fit_final_lr;
use super::solver::SolverOptions;
use crate::analysis::metrics::{compute_metrics, threshold_predictions, Metrics};
use crate::error::{Error, Result};
use crate::probes::ops::{l2_normalize_layers, sigmoid};
use crate::probes::{bce_logits_loss, LayerLRParams, LayerMLPParams, LayerProbe, Probe, Variant};
use crate::store::{class_stats, split_title_disjoint, ClassStats, Dataset, Source, Split};

/// Decision threshold on the sigmoid output.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Layer-normalized inputs, widened to f64, ready for the layer probes.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub layers: usize,
    pub hidden: usize,
    inputs: Vec<Vec<f64>>,
    pub labels: Vec<Source>,
}

impl PreparedSet {
    pub fn new(dataset: &Dataset) -> Self {
        Self {
            layers: dataset.layers(),
            hidden: dataset.hidden(),
            inputs: dataset.records().iter().map(|r| l2_normalize_layers(&r.tensor)).collect(),
            labels: dataset.labels(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn all_inputs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.target()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based early stopping on a score to maximize. An epoch improves
/// when its score is strictly higher, or equal with a strictly lower loss.
/// Exact ties on both keep the earliest epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, score: f64, loss: f64) -> StopDecision {
        let improved = self.best.is_none_or(|(_, b, bl)| score > b || (score == b && loss < bl));
        if improved {
            self.best = Some((epoch, score, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision { improved, stop: self.since_best >= self.patience }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation BCE with the training `pos_weight`; breaks macro-F1 ties.
    pub val_loss: f64,
    pub val_macro_f1: f64,
    pub val_accuracy: f64,
}

/// Summary of one run; serialized as the run summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub pos_weight: f64,
    pub class_stats: ClassStats,
    pub val_metrics: Metrics,
    pub train_size: usize,
    pub val_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub probe: Probe,
    pub summary: RunSummary,
}

/// Inverted-dropout masks: entries are 0 or `1/(1−p)`.
fn dropout_masks<R: Rng>(rng: &mut R, count: usize, len: usize, p: f64) -> Vec<Vec<f64>> {
    let keep = 1.0 / (1.0 - p);
    (0..count)
        .map(|_| (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
        .collect()
}

/// Validation metrics and loss, without dropout.
pub(crate) fn validation_metrics<P: LayerProbe>(params: &P, val: &PreparedSet, pos_weight: f64) -> Result<(Metrics, f64)> {
    let logits = params.logits(&val.all_inputs(), None);
    let loss = bce_logits_loss(&logits, &val.targets(), pos_weight).loss;
    let scores: Vec<f64> = logits.into_iter().map(sigmoid).collect();
    let metrics = compute_metrics(&threshold_predictions(&scores, DEFAULT_THRESHOLD), &val.labels)?;
    Ok((metrics, loss))
}

struct LoopOutcome<P> {
    params: P,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    stopped_early: bool,
    val_metrics: Metrics,
}

fn run_loop<P: LayerProbe>(
    mut params: P,
    rng: &mut ChaCha8Rng,
    train: &PreparedSet,
    val: &PreparedSet,
    config: &TrainConfig,
    pos_weight: f64,
) -> Result<LoopOutcome<P>> {
    let mut opt = AdamW::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let targets = train.targets();
    let mut history = Vec::new();
    let mut best: Option<(P, Metrics)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| train.input(i)).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let masks = (config.dropout > 0.0)
                .then(|| dropout_masks(rng, batch.len(), params.mask_len(), config.dropout));
            let logits = params.logits(&inputs, masks.as_deref());
            let loss = bce_logits_loss(&logits, &ys, pos_weight);
            if !loss.loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            let grads = params.backward(&inputs, masks.as_deref(), &loss.grad);
            opt.step(&mut params, &grads, config.learning_rate, config.weight_decay);
            loss_sum += loss.loss * batch.len() as f64;
        }
        let (metrics, val_loss) = validation_metrics(&params, val, pos_weight)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_macro_f1: metrics.macro_f1,
            val_accuracy: metrics.accuracy,
        });
        let decision = stopper.observe(epoch, metrics.macro_f1, val_loss);
        if decision.improved {
            best = Some((params.clone(), metrics));
        }
        if decision.stop && epoch < config.max_epochs {
            stopped_early = true;
            break;
        }
    }
    let (params, val_metrics) = best.expect("at least one epoch runs");
    Ok(LoopOutcome {
        params,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(1),
        stopped_early,
        val_metrics,
    })
}

/// Trains on `train`, early-stopping on `val`. Both sets must be non-empty
/// and `train` must hold both classes.
pub fn train_with_validation(train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<TrainedProbe> {
    config.validate()?;
    let stats = class_stats(train)?;
    if val.is_empty() {
        return Err(Error::InsufficientData("validation split is empty".into()));
    }
    if train.layers() != val.layers() || train.hidden() != val.hidden() {
        return Err(Error::dims(
            format!("{}x{}", train.layers(), train.hidden()),
            format!("{}x{}", val.layers(), val.hidden()),
        ));
    }

    let summary = |history, best_epoch, stopped_early, val_metrics| RunSummary {
        config: config.clone(),
        history,
        best_epoch,
        stopped_early,
        pos_weight: stats.pos_weight,
        class_stats: stats,
        val_metrics,
        train_size: train.len(),
        val_size: val.len(),
    };

    if config.variant == Variant::FinalLr {
        let fit = fit_final_lr(train, SolverOptions::default())?;
        let probe = Probe::FinalLr(fit.params);
        let scores = val
            .records()
            .iter()
            .map(|r| probe.score(&r.tensor))
            .collect::<Result<Vec<_>>>()?;
        let metrics = compute_metrics(&threshold_predictions(&scores, DEFAULT_THRESHOLD), &val.labels())?;
        let final_objective = fit.report.objective_history.last().copied().unwrap_or(f64::NAN);
        let logits = val
            .records()
            .iter()
            .map(|r| probe.logit(&r.tensor))
            .collect::<Result<Vec<_>>>()?;
        let val_targets: Vec<f64> = val.labels().iter().map(|l| l.target()).collect();
        let history = vec![EpochRecord {
            epoch: 1,
            train_loss: final_objective / train.len() as f64,
            val_loss: bce_logits_loss(&logits, &val_targets, stats.pos_weight).loss,
            val_macro_f1: metrics.macro_f1,
            val_accuracy: metrics.accuracy,
        }];
        return Ok(TrainedProbe { probe, summary: summary(history, 1, false, metrics) });
    }

    let train_set = PreparedSet::new(train);
    let val_set = PreparedSet::new(val);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (l, h) = (train.layers(), train.hidden());
    let (probe, outcome) = match config.variant {
        Variant::LayerLr => {
            let init = LayerLRParams::init(l, h, &mut rng);
            let out = run_loop(init, &mut rng, &train_set, &val_set, config, stats.pos_weight)?;
            (Probe::LayerLr(out.params.clone()), (out.history, out.best_epoch, out.stopped_early, out.val_metrics))
        }
        Variant::LayerMlp => {
            let init = LayerMLPParams::init(l, h, config.bottleneck_m, &mut rng);
            let out = run_loop(init, &mut rng, &train_set, &val_set, config, stats.pos_weight)?;
            (Probe::LayerMlp(out.params.clone()), (out.history, out.best_epoch, out.stopped_early, out.val_metrics))
        }
        Variant::FinalLr => unreachable!(),
    };
    let (history, best_epoch, stopped_early, val_metrics) = outcome;
    Ok(TrainedProbe { probe, summary: summary(history, best_epoch, stopped_early, val_metrics) })
}

/// Carves a title-disjoint validation split (`config.val_fraction`, seeded by
/// `config.seed`) out of `dataset` and trains on the remainder.
pub fn train_probe(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedProbe> {
    config.validate()?;
    class_stats(dataset)?;
    let (train, val) = carve_validation(dataset, config.val_fraction, config.seed)?;
    train_with_validation(&train, &val, config)
}

/// `(train, val)` with roughly `val_fraction` of the records in `val`.
pub fn carve_validation(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = split_title_disjoint(dataset, [1.0 - val_fraction, val_fraction, 0.0], seed)?;
    Ok((split.subset(dataset, Split::Train), split.subset(dataset, Split::Val)))
}
