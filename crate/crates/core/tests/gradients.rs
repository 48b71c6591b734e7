// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analytic gradients of all three probes against central differences of an
//! independently written loss.

use attriprobe::probes::ops::{sparsemax_threshold, l2_normalize_layers};
use attriprobe::probes::{bce_logits_loss, FinalLRParams, LayerLRParams, LayerMLPParams, LayerProbe, ParamSet};
use attriprobe::LayerStack;
use attriprobe_oracles::{central_difference, weighted_bce};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-10;
const CONFIGS: usize = 100;

fn close(a: f64, n: f64) -> bool {
    let d = (a - n).abs();
    d <= REL_TOL * a.abs().max(n.abs()) || d <= ABS_FLOOR
}

fn set_flat<P: ParamSet>(p: &mut P, mut i: usize, v: f64) {
    for t in p.tensors_mut() {
        if i < t.len() {
            t[i] = v;
            return;
        }
        i -= t.len();
    }
    panic!("flat index out of range");
}

struct Batch {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    pos_weight: f64,
}

impl Batch {
    fn refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, layers: usize, hidden: usize) -> Batch {
    let n = rng.random_range(1..=6);
    let inputs = (0..n)
        .map(|_| {
            let data = (0..layers * hidden).map(|_| rng.random_range(-3.0f32..3.0)).collect();
            l2_normalize_layers(&LayerStack::new(layers, hidden, data).unwrap())
        })
        .collect();
    let targets = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    Batch { inputs, targets, pos_weight: rng.random_range(0.3..3.0) }
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Option<Vec<Vec<f64>>> {
    if rng.random_bool(0.5) {
        return None;
    }
    let p: f64 = rng.random_range(0.1..0.5);
    Some(
        (0..n)
            .map(|_| (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect())
            .collect(),
    )
}

fn fill_uniform<P: ParamSet>(p: &mut P, rng: &mut ChaCha8Rng, scale: f64) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

/// Returns the number of compared entries, or the first mismatch.
fn check_layer_probe<P: LayerProbe>(p: &P, batch: &Batch, masks: Option<&[Vec<f64>]>) -> Result<usize, String> {
    let x = batch.refs();
    let loss = bce_logits_loss(&p.logits(&x, masks), &batch.targets, batch.pos_weight);
    let analytic = p.backward(&x, masks, &loss.grad).flatten();
    let flat = p.flatten();
    for (i, &a) in analytic.iter().enumerate() {
        let numeric = central_difference(
            |v| {
                let mut q = p.clone();
                set_flat(&mut q, i, v[i]);
                weighted_bce(&q.logits(&x, masks), &batch.targets, batch.pos_weight)
            },
            &flat,
            i,
            STEP,
        );
        if !close(a, numeric) {
            return Err(format!("param {i}: analytic {a:e} vs numeric {numeric:e}"));
        }
    }
    Ok(analytic.len())
}

#[test]
fn loss_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-40.0..40.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let pw = rng.random_range(0.1..5.0);
        let got = bce_logits_loss(&z, &y, pw).loss;
        let want = weighted_bce(&z, &y, pw);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn final_lr_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    for _ in 0..CONFIGS {
        let h = rng.random_range(1..=8);
        let mut p = FinalLRParams::identity(h);
        fill_uniform(&mut p, &mut rng, 1.0);
        let batch = random_batch(&mut rng, 1, h);
        let x = batch.refs();
        let loss = bce_logits_loss(&p.logits(&x), &batch.targets, batch.pos_weight);
        let analytic = p.backward(&x, &loss.grad).flatten();
        let flat = p.flatten();
        for (i, &a) in analytic.iter().enumerate() {
            let numeric = central_difference(
                |v| {
                    let mut q = p.clone();
                    set_flat(&mut q, i, v[i]);
                    weighted_bce(&q.logits(&x), &batch.targets, batch.pos_weight)
                },
                &flat,
                i,
                STEP,
            );
            assert!(close(a, numeric), "param {i}: {a:e} vs {numeric:e}");
            checked += 1;
        }
    }
    assert!(checked > CONFIGS);
}

#[test]
fn layer_lr_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for c in 0..CONFIGS {
        let (l, h) = (rng.random_range(1..=6), rng.random_range(1..=8));
        let mut p = LayerLRParams::init(l, h, &mut rng);
        fill_uniform(&mut p, &mut rng, 2.0);
        let batch = random_batch(&mut rng, l, h);
        let masks = random_masks(&mut rng, batch.inputs.len(), p.mask_len());
        check_layer_probe(&p, &batch, masks.as_deref()).unwrap_or_else(|e| panic!("config {c}: {e}"));
    }
}

/// Smallest distance of any logit from the sparsemax threshold.
fn support_margin(theta: &[f64]) -> f64 {
    let tau = sparsemax_threshold(theta);
    theta.iter().map(|t| (t - tau).abs()).fold(f64::INFINITY, f64::min)
}

#[test]
fn layer_mlp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut sparse_supports = 0;
    for c in 0..CONFIGS {
        let (l, h, m) = (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=8));
        let mut p = LayerMLPParams::init(l, h, m, &mut rng);
        // Resample until no logit sits on a sparsemax kink.
        loop {
            fill_uniform(&mut p, &mut rng, 1.5);
            if support_margin(&p.theta) >= 1e-3 {
                break;
            }
        }
        if p.layer_weights().contains(&0.0) {
            sparse_supports += 1;
        }
        let batch = random_batch(&mut rng, l, h);
        let masks = random_masks(&mut rng, batch.inputs.len(), p.mask_len());
        check_layer_probe(&p, &batch, masks.as_deref()).unwrap_or_else(|e| panic!("config {c}: {e}"));
    }
    assert!(sparse_supports > 10, "too few configurations exercise a sparse support");
}

#[test]
fn theta_gradient_vanishes_off_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut p = LayerMLPParams::init(4, 3, 5, &mut rng);
    p.theta = vec![3.0, 0.0, 2.5, -1.0];
    let alpha = p.layer_weights();
    let batch = random_batch(&mut rng, 4, 3);
    let x = batch.refs();
    let loss = bce_logits_loss(&p.logits(&x, None), &batch.targets, batch.pos_weight);
    let g = p.backward(&x, None, &loss.grad);
    for (a, gt) in alpha.iter().zip(&g.theta) {
        if *a == 0.0 {
            assert_eq!(*gt, 0.0);
        }
    }
    assert_eq!(alpha[1], 0.0);
}
