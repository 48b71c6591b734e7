// SPDX-License-Identifier: MIT OR Apache-2.0

use attriprobe::probes::{FinalLRParams, LayerLRParams, LayerProbe, Probe};
use attriprobe::store::{class_stats, split_title_disjoint};
use attriprobe::synth::{generate, SynthSpec};
use attriprobe::training::{
    carve_validation, fit_final_lr, grid_search, train_probe, GridSpace, RunSummary, SolverOptions,
};
use attriprobe::{ActivationRecord, Dataset, Execution, LayerStack, Source, TokenTag, TrainConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_synth(separation: f64, seed: u64) -> Dataset {
    let spec = SynthSpec {
        layers: 4,
        hidden: 8,
        planted_layer: 2,
        separation,
        n_per_class: 120,
        title_count: 40,
        seed,
        ..Default::default()
    };
    generate(&spec, Execution::Sequential).unwrap().0
}

fn quick(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig { seed, max_epochs: 25, bottleneck_m: 8, ..TrainConfig::for_variant(variant) }
}

fn check_history(s: &RunSummary) {
    let best = &s.history[s.best_epoch - 1];
    let max_f1 = s.history.iter().map(|e| e.val_macro_f1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.val_macro_f1, max_f1, "best epoch is not a max-macro-F1 epoch");
    assert_eq!(s.val_metrics.macro_f1, best.val_macro_f1);
    assert_eq!(s.val_metrics.accuracy, best.val_accuracy);
    for e in s.history.iter().filter(|e| e.val_macro_f1 == max_f1) {
        assert!(e.val_loss > best.val_loss || (e.val_loss == best.val_loss && e.epoch >= best.epoch));
    }
    if s.stopped_early {
        assert_eq!(s.history.len(), s.best_epoch + s.config.patience);
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let ds = small_synth(1.5, 3);
    for variant in [Variant::FinalLr, Variant::LayerLr, Variant::LayerMlp] {
        let a = train_probe(&ds, &quick(variant, 9)).unwrap();
        let b = train_probe(&ds, &quick(variant, 9)).unwrap();
        assert_eq!(a, b, "{variant}");
    }
}

#[test]
fn returned_epoch_is_best_in_history() {
    for seed in 0..4 {
        let ds = small_synth(0.8, seed);
        for variant in [Variant::LayerLr, Variant::LayerMlp] {
            let run = train_probe(&ds, &quick(variant, seed)).unwrap();
            check_history(&run.summary);
        }
    }
}

#[test]
fn pos_weight_comes_from_training_portion() {
    let records: Vec<ActivationRecord> = small_synth(1.0, 1)
        .records()
        .iter()
        .enumerate()
        .filter(|(i, r)| r.label == Source::Contextual || i % 3 != 0)
        .map(|(_, r)| r.clone())
        .collect();
    let ds = Dataset::from_records(records).unwrap();
    let cfg = quick(Variant::LayerLr, 4);
    let run = train_probe(&ds, &cfg).unwrap();
    let (train, val) = carve_validation(&ds, cfg.val_fraction, cfg.seed).unwrap();
    let stats = class_stats(&train).unwrap();
    assert_eq!(run.summary.class_stats, stats);
    assert_eq!(run.summary.pos_weight, stats.pos_weight);
    assert_eq!((run.summary.train_size, run.summary.val_size), (train.len(), val.len()));
    assert_ne!(stats.pos_weight, 1.0);
}

fn random_2d(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let label = if rng.random_bool(0.35) { Source::Parametric } else { Source::Contextual };
            let shift = if label == Source::Parametric { 0.8 } else { -0.3 };
            let x: Vec<f32> = (0..2).map(|j| rng.random_range(-2.0..2.0) * (1.0 + j as f32) + shift).collect();
            ActivationRecord {
                id: format!("p{i}"),
                label,
                title: format!("t{}", i % 17),
                token_tag: TokenTag::Ftg,
                tensor: LayerStack::new(1, 2, x).unwrap(),
                correct: None,
                source_required: None,
                model_id: "m".into(),
            }
        })
        .collect();
    Dataset::from_records(records).unwrap()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn final_lr_reaches_a_stationary_point() {
    for seed in 0..5 {
        let ds = random_2d(seed, 300);
        let fit = fit_final_lr(&ds, SolverOptions::default()).unwrap();
        assert!(fit.report.converged, "seed {seed}: {} iters, grad {:e}", fit.report.iterations, fit.report.grad_inf_norm);
        let hist = &fit.report.objective_history;
        assert!(hist.windows(2).all(|w| w[1] <= w[0]), "objective increased");

        let p = &fit.params;
        let n = ds.len() as f64;
        let pos = ds.records().iter().filter(|r| r.label == Source::Parametric).count() as f64;
        let weight = |y: f64| if y > 0.5 { n / (2.0 * pos) } else { n / (2.0 * (n - pos)) };
        let mut gw: Vec<f64> = p.w.clone();
        let mut gb = 0.0;
        for r in ds.records() {
            let x = p.standardize(r.tensor.last_row());
            let y = r.label.target();
            let z: f64 = x.iter().zip(&p.w).map(|(a, b)| a * b).sum::<f64>() + p.b;
            let g = weight(y) * (sigmoid(z) - y);
            gw.iter_mut().zip(&x).for_each(|(acc, xi)| *acc += g * xi);
            gb += g;
        }
        let norm = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        assert!(norm < 1e-5, "seed {seed}: gradient inf-norm {norm:e}");
    }
}

#[test]
fn concentrated_layer_lr_matches_final_lr_decisions() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let (l, h) = (rng.random_range(2..6), rng.random_range(1..8));
        let mut layer = LayerLRParams::init(l, h, &mut rng);
        layer.theta = vec![0.0; l];
        layer.theta[l - 1] = 80.0;
        layer.b = 0.0;
        let mut last = FinalLRParams::identity(h);
        last.w = layer.w.clone();
        let (lp, fp) = (Probe::LayerLr(layer), Probe::FinalLr(last));
        for _ in 0..20 {
            let data: Vec<f32> = (0..l * h).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = LayerStack::new(l, h, data).unwrap();
            assert_eq!(lp.score(&t).unwrap() >= 0.5, fp.score(&t).unwrap() >= 0.5);
        }
    }
}

#[test]
fn forward_passes_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let p = LayerLRParams::init(3, 4, &mut rng);
    let x: Vec<f64> = (0..12).map(|i| f64::from(i) / 12.0).collect();
    let masks = vec![vec![2.0, 0.0, 2.0, 2.0]];
    assert_eq!(p.logits(&[&x], Some(&masks)), p.logits(&[&x], Some(&masks)));
}

#[test]
fn planted_learning_rate_wins_grid() {
    let ds = small_synth(3.0, 5);
    let space = GridSpace {
        dropout: vec![0.0],
        weight_decay: vec![0.0],
        learning_rate: vec![1e-7, 5e-2, 1e-6],
        bottleneck_m: vec![8],
        epochs_per_config: 10,
    };
    let base = quick(Variant::LayerLr, 2);
    let result = grid_search(&ds, &space, Variant::LayerLr, &base, Execution::Parallel).unwrap();
    assert_eq!(result.best_index, 1);
    assert_eq!(result.best.learning_rate, 5e-2);
}

#[test]
fn parallel_grid_equals_sequential() {
    let ds = small_synth(1.0, 6);
    let space = GridSpace {
        dropout: vec![0.0, 0.2],
        weight_decay: vec![0.0, 1e-3],
        learning_rate: vec![1e-3, 1e-2],
        bottleneck_m: vec![4, 8],
        epochs_per_config: 4,
    };
    let base = quick(Variant::LayerMlp, 3);
    let par = grid_search(&ds, &space, Variant::LayerMlp, &base, Execution::Parallel).unwrap();
    let seq = grid_search(&ds, &space, Variant::LayerMlp, &base, Execution::Sequential).unwrap();
    assert_eq!(par.entries.len(), 16);
    assert_eq!(par, seq);
}

#[test]
fn planted_signal_single_seed() {
    let spec = SynthSpec { seed: 11, ..Default::default() };
    let (ds, truth) = generate(&spec, Execution::Parallel).unwrap();
    let split = split_title_disjoint(&ds, [0.8, 0.0, 0.2], 11).unwrap();
    let (train, _, test) = split.apply(&ds);
    let run = train_probe(&train, &TrainConfig { seed: 11, ..TrainConfig::for_variant(Variant::LayerLr) }).unwrap();
    let report = attriprobe::analysis::evaluate_probe(&run.probe, &test, 0.5, Execution::Parallel).unwrap();
    assert!(report.metrics.macro_f1 >= 0.99);
    let alpha = run.probe.layer_weights().unwrap();
    assert!(alpha[truth.spec.planted_layer] >= 0.5, "{alpha:?}");
}
