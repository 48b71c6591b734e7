// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic activation datasets with a planted, linearly separable signal.
//!
//! Every layer row is isotropic Gaussian noise. At the planted layer, records
//! are shifted by `±μ` along a seeded unit direction, the sign given by the
//! class (parametric `+`, contextual `−`). Records are generated from
//! per-record seeds, so parallel and sequential generation agree exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bias::BiasExample;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::store::{ActivationRecord, Dataset, LayerStack, Source, TokenTag};

pub const SYNTH_MODEL_ID: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub layers: usize,
    pub hidden: usize,
    /// 0-based layer carrying the signal.
    pub planted_layer: usize,
    /// Shift along the signal direction, `μ ≥ 0`.
    pub separation: f64,
    pub noise: f64,
    pub n_per_class: usize,
    pub title_count: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            layers: 8,
            hidden: 32,
            planted_layer: 5,
            separation: 5.0,
            noise: 1.0,
            n_per_class: 500,
            title_count: 100,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("synthetic L and H must be positive".into()));
        }
        if self.planted_layer >= self.layers {
            return Err(Error::InvalidConfig(format!(
                "planted layer {} outside 0..{}",
                self.planted_layer, self.layers
            )));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("separation and noise must be finite and non-negative".into()));
        }
        if self.title_count == 0 {
            return Err(Error::InvalidConfig("title count must be positive".into()));
        }
        Ok(())
    }
}

/// How the decoy direction encodes the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoyKind {
    /// Shift of `sign·μ_d` where the sign matches the class sign when agreeing.
    #[default]
    Signed,
    /// Shift of `±μ_d` present on agreeing parametric records and on
    /// disagreeing contextual ones, with a sign balanced within each class.
    /// The class means along the direction are equal, so only a nonlinear
    /// head can read it.
    Magnitude,
}

/// A second, shortcut direction at another layer that agrees with the label
/// at rate `rho` in the training distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoySpec {
    /// 0-based layer carrying the decoy (typically shallow).
    pub layer: usize,
    pub separation: f64,
    /// Agreement rate in `[0.5, 1)`.
    pub rho: f64,
    pub test_n_per_class: usize,
    #[serde(default)]
    pub kind: DecoyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub decoy: Option<DecoySpec>,
    pub direction: Vec<f64>,
    pub decoy_direction: Option<Vec<f64>>,
    pub model_id: String,
}

fn unit_direction(rng: &mut ChaCha8Rng, hidden: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..hidden).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn directions(spec: &SynthSpec) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dir = unit_direction(&mut rng, spec.hidden);
    let decoy = unit_direction(&mut rng, spec.hidden);
    (dir, decoy)
}

fn class_sign(label: Source) -> f64 {
    if label.is_positive() {
        1.0
    } else {
        -1.0
    }
}

/// Parameters for one record's tensor.
struct RecordPlan<'a> {
    seed: u64,
    label: Source,
    /// `(layer, shift, direction)` added on top of the noise.
    shifts: Vec<(usize, f64, &'a [f64])>,
}

fn build_tensor(spec: &SynthSpec, plan: &RecordPlan<'_>) -> LayerStack {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut data: Vec<f64> = (0..spec.layers * spec.hidden)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.noise * z
        })
        .collect();
    for &(layer, shift, dir) in &plan.shifts {
        let row = &mut data[layer * spec.hidden..(layer + 1) * spec.hidden];
        row.iter_mut().zip(dir).for_each(|(x, d)| *x += shift * d);
    }
    let data = data.into_iter().map(|v| v as f32).collect();
    LayerStack::new(spec.layers, spec.hidden, data).expect("synthetic shape")
}

fn materialize(
    spec: &SynthSpec,
    plans: &[RecordPlan<'_>],
    id_prefix: &str,
    title_prefix: &str,
    exec: Execution,
) -> Result<Dataset> {
    let tensors = exec.map(plans, |p| build_tensor(spec, p));
    let records = plans
        .iter()
        .zip(tensors)
        .enumerate()
        .map(|(i, (p, tensor))| ActivationRecord {
            id: format!("{id_prefix}-{i:06}"),
            label: p.label,
            title: format!("{title_prefix}-{:05}", (i / 2) % spec.title_count),
            token_tag: TokenTag::Ftg,
            tensor,
            correct: None,
            source_required: None,
            model_id: SYNTH_MODEL_ID.into(),
        })
        .collect();
    Dataset::new(SYNTH_MODEL_ID, spec.layers, spec.hidden, records)
}

fn label_of(i: usize) -> Source {
    if i % 2 == 1 {
        Source::Parametric
    } else {
        Source::Contextual
    }
}

/// Planted-signal dataset. Classes alternate record by record, so the classes
/// are exactly balanced and every title holds both classes.
pub fn generate(spec: &SynthSpec, exec: Execution) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let (dir, _) = directions(spec);
    let plans: Vec<RecordPlan<'_>> = (0..2 * spec.n_per_class)
        .map(|i| {
            let label = label_of(i);
            RecordPlan {
                seed: derive_seed(spec.seed, i as u64),
                label,
                shifts: vec![(spec.planted_layer, class_sign(label) * spec.separation, &dir)],
            }
        })
        .collect();
    let dataset = materialize(spec, &plans, "synth", "synth-title", exec)?;
    let truth = GroundTruth {
        spec: spec.clone(),
        decoy: None,
        direction: dir.clone(),
        decoy_direction: None,
        model_id: SYNTH_MODEL_ID.into(),
    };
    Ok((dataset, truth))
}

/// Rebuilds the dataset described by a ground-truth file.
pub fn regenerate(truth: &GroundTruth, exec: Execution) -> Result<Vec<Dataset>> {
    match &truth.decoy {
        None => Ok(vec![generate(&truth.spec, exec)?.0]),
        Some(d) => {
            let out = generate_decoy(&truth.spec, d, exec)?;
            Ok(vec![out.train, out.test_in_distribution, out.test_shifted])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoyDatasets {
    /// Decoy sign agrees with the label at rate ρ.
    pub train: Dataset,
    /// Held-out sample from the training distribution.
    pub test_in_distribution: Dataset,
    /// Decoy sign independent of the label (exactly balanced within each class).
    pub test_shifted: Dataset,
    pub ground_truth: GroundTruth,
}

/// Per-record decoy agreement flags: within each class exactly
/// `round(rate · count)` records agree, positions shuffled by `rng`.
fn agreement_flags(n_per_class: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let agree = (rate * n_per_class as f64).round() as usize;
    let per_class: [Vec<bool>; 2] = [0, 1].map(|_| {
        let mut v: Vec<bool> = (0..n_per_class).map(|j| j < agree).collect();
        v.shuffle(rng);
        v
    });
    (0..2 * n_per_class).map(|i| per_class[i % 2][i / 2]).collect()
}

pub fn generate_decoy(spec: &SynthSpec, decoy: &DecoySpec, exec: Execution) -> Result<DecoyDatasets> {
    spec.validate()?;
    if !(0.5..1.0).contains(&decoy.rho) {
        return Err(Error::InvalidConfig(format!("decoy rate must lie in [0.5, 1), got {}", decoy.rho)));
    }
    if decoy.layer >= spec.layers {
        return Err(Error::InvalidConfig(format!("decoy layer {} outside 0..{}", decoy.layer, spec.layers)));
    }
    let (dir, decoy_dir) = directions(spec);
    let mut flag_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));

    let mut make = |n_per_class: usize, rate: f64, stream: u64, id: &str, title: &str| -> Result<Dataset> {
        let flags = agreement_flags(n_per_class, rate, &mut flag_rng);
        let base = derive_seed(spec.seed, stream);
        let mut fired = [0usize; 2];
        let plans: Vec<RecordPlan<'_>> = flags
            .iter()
            .enumerate()
            .map(|(i, &agrees)| {
                let label = label_of(i);
                let sign = class_sign(label);
                let decoy_sign = match decoy.kind {
                    DecoyKind::Signed if agrees => sign,
                    DecoyKind::Signed => -sign,
                    DecoyKind::Magnitude if agrees == label.is_positive() => {
                        let c = &mut fired[i % 2];
                        *c += 1;
                        if *c % 2 == 1 { 1.0 } else { -1.0 }
                    }
                    DecoyKind::Magnitude => 0.0,
                };
                RecordPlan {
                    seed: derive_seed(base, i as u64),
                    label,
                    shifts: vec![
                        (spec.planted_layer, sign * spec.separation, &dir),
                        (decoy.layer, decoy_sign * decoy.separation, &decoy_dir),
                    ],
                }
            })
            .collect();
        let sub = SynthSpec { n_per_class, ..spec.clone() };
        materialize(&sub, &plans, id, title, exec)
    };

    let train = make(spec.n_per_class, decoy.rho, 1, "decoy-train", "decoy-train-title")?;
    let test_in_distribution = make(decoy.test_n_per_class, decoy.rho, 2, "decoy-iid", "decoy-iid-title")?;
    let test_shifted = make(decoy.test_n_per_class, 0.5, 3, "decoy-shift", "decoy-shift-title")?;
    let ground_truth = GroundTruth {
        spec: spec.clone(),
        decoy: Some(decoy.clone()),
        direction: dir,
        decoy_direction: Some(decoy_dir),
        model_id: SYNTH_MODEL_ID.into(),
    };
    Ok(DecoyDatasets { train, test_in_distribution, test_shifted, ground_truth })
}

// ---------------------------------------------------------------------------
// Text corpora for the lexical-bias audit

/// Token that [`marker_corpus`] adds to every parametric passage.
pub const MARKER_TOKEN: &str = "zzmarker";
const FILLER_WORDS: usize = 300;

/// Balanced passages of 8 to 16 filler words drawn uniformly from a fixed
/// list, alternating contextual and parametric. With `marker`, each
/// parametric passage also contains [`MARKER_TOKEN`] at a random position.
pub fn marker_corpus(n_per_class: usize, marker: bool, seed: u64) -> Vec<BiasExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2 * n_per_class)
        .map(|i| {
            let label = label_of(i);
            let len = rng.random_range(8..=16);
            let mut words: Vec<String> =
                (0..len).map(|_| format!("w{:03}", rng.random_range(0..FILLER_WORDS))).collect();
            if marker && label.is_positive() {
                let at = rng.random_range(0..=words.len());
                words.insert(at, MARKER_TOKEN.to_owned());
            }
            BiasExample {
                id: format!("text-{i:06}"),
                title: format!("text-title-{:05}", i / 2),
                passage: words.join(" "),
                label,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec { layers: 3, hidden: 4, planted_layer: 1, n_per_class: 10, title_count: 4, ..Default::default() }
    }

    #[test]
    fn deterministic_and_balanced() {
        let (a, _) = generate(&small(), Execution::Sequential).unwrap();
        let (b, _) = generate(&small(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let pos = a.records().iter().filter(|r| r.label.is_positive()).count();
        assert_eq!(pos, 10);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn direction_is_unit() {
        let (_, t) = generate(&small(), Execution::Sequential).unwrap();
        let n: f64 = t.direction.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec { planted_layer: 3, ..small() }, Execution::Sequential).is_err());
        let d = DecoySpec { layer: 0, separation: 1.0, rho: 1.0, test_n_per_class: 4, kind: DecoyKind::Signed };
        assert!(generate_decoy(&small(), &d, Execution::Sequential).is_err());
    }

    #[test]
    fn agreement_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = agreement_flags(20, 0.75, &mut rng);
        let per: Vec<usize> = (0..2).map(|c| f.iter().skip(c).step_by(2).filter(|x| **x).count()).collect();
        assert_eq!(per, vec![15, 15]);
    }
}
