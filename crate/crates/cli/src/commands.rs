// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use attriprobe::analysis::{
    evaluate_probe, layer_weight_report, mismatch_analysis, mismatch_records, pca_2d, Metrics, MismatchRecord,
    MismatchReport, DEFAULT_SMOOTHING_SIGMA,
};
use attriprobe::bias::{cross_validate_bias, read_bias_examples, TfidfConfig, DEFAULT_CV_SEED, DEFAULT_FOLDS};
use attriprobe::probes::{encode_probe, read_probe};
use attriprobe::store::{read_dataset, split_title_disjoint};
use attriprobe::synth::{generate, generate_decoy, DecoyKind, DecoySpec, SynthSpec};
use attriprobe::training::{grid_search, train_probe, GridSpace, RunSummary, DEFAULT_THRESHOLD};
use attriprobe::{Execution, TrainConfig, Variant};
use log::info;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::FileConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_file, OutDir, RunManifest};
use crate::{BiasArgs, EvalArgs, GridArgs, LayersArgs, MismatchArgs, PcaArgs, SynthArgs, TrainArgs};

pub struct Context {
    pub exec: Execution,
    pub threads: usize,
}

/// Share of titles held out for testing by `train`.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

struct Run {
    command: &'static str,
    start: Instant,
    inputs: BTreeMap<String, String>,
}

impl Run {
    fn start(command: &'static str) -> Self {
        Self { command, start: Instant::now(), inputs: BTreeMap::new() }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn finish(self, out: OutDir, ctx: &Context, config: Value, seed: Option<u64>) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            inputs: self.inputs,
            outputs: BTreeMap::new(),
            threads: ctx.threads,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
        };
        out.finish(manifest)
    }
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    s.parse::<Variant>().map_err(|_| CliError::usage(format!("unknown variant {s:?}")))
}

fn check_threshold(t: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(CliError::usage(format!("--threshold must lie in [0, 1], got {t}")))
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    threshold: f64,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    run: &'a RunSummary,
    test_fraction: f64,
    test_size: usize,
    test_metrics: &'a Metrics,
}

pub fn train(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    const KEYS: &[&str] =
        &["data", "variant", "lr", "wd", "dropout", "batch", "epochs", "patience", "m", "seed", "test_fraction", "out"];
    let file = FileConfig::load(a.common.config.as_deref(), KEYS)?;
    let mut run = Run::start("train");
    let data: PathBuf = file.require("data", a.data)?;
    let out: PathBuf = file.require("out", a.common.out)?;
    let variant = parse_variant(&file.pick("variant", a.variant, Variant::LayerLr.name().to_owned())?)?;
    let base = TrainConfig::for_variant(variant);
    let dropout = file.pick_opt("dropout", a.dropout)?;
    if variant == Variant::FinalLr && dropout.is_some_and(|d: f64| d != 0.0) {
        return Err(CliError::usage("final-lr has no dropout; drop --dropout"));
    }
    let m = file.pick_opt("m", a.m)?;
    if variant != Variant::LayerMlp && m.is_some() {
        return Err(CliError::usage("--m applies only to layer-mlp"));
    }
    let config = TrainConfig {
        variant,
        learning_rate: file.pick("lr", a.lr, base.learning_rate)?,
        weight_decay: file.pick("wd", a.wd, base.weight_decay)?,
        dropout: dropout.unwrap_or(base.dropout),
        batch_size: file.pick("batch", a.batch, base.batch_size)?,
        max_epochs: file.pick("epochs", a.epochs, base.max_epochs)?,
        patience: file.pick("patience", a.patience, base.patience)?,
        val_fraction: base.val_fraction,
        seed: file.pick("seed", a.seed, base.seed)?,
        bottleneck_m: m.unwrap_or(base.bottleneck_m),
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let test_fraction: f64 = file.pick("test_fraction", a.test_fraction, DEFAULT_TEST_FRACTION)?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CliError::usage(format!("--test-fraction must lie in (0, 1), got {test_fraction}")));
    }

    run.input(&data)?;
    let dataset = read_dataset(&data)?;
    let split = split_title_disjoint(&dataset, [1.0 - test_fraction, 0.0, test_fraction], config.seed)?;
    let (train_set, _, test_set) = split.apply(&dataset);
    if test_set.is_empty() {
        return Err(CliError::Data("test split is empty; use more titles or a larger --test-fraction".into()));
    }
    info!("training {} on {} records, testing on {}", variant, train_set.len(), test_set.len());
    let trained = train_probe(&train_set, &config)?;
    let report = evaluate_probe(&trained.probe, &test_set, DEFAULT_THRESHOLD, ctx.exec)?;

    let mut out = OutDir::create(&out)?;
    out.write_bytes("probe.atrp", &encode_probe(&trained.probe))?;
    out.write_json("metrics.json", &MetricsFile { threshold: DEFAULT_THRESHOLD, metrics: &report.metrics })?;
    out.write_json(
        "summary.json",
        &TrainSummary {
            run: &trained.summary,
            test_fraction,
            test_size: test_set.len(),
            test_metrics: &report.metrics,
        },
    )?;
    out.write_json("split.json", &split)?;
    out.write_dataset("heldout.atrw", &test_set)?;
    let snapshot = json!({ "train": config, "test_fraction": test_fraction, "data": data });
    run.finish(out, ctx, snapshot, Some(config.seed))
}

pub fn eval(ctx: &Context, a: EvalArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref(), &["data", "probe", "threshold", "out"])?;
    let mut run = Run::start("eval");
    let data: PathBuf = file.require("data", a.data)?;
    let probe_path: PathBuf = file.require("probe", a.probe)?;
    let out: PathBuf = file.require("out", a.common.out)?;
    let threshold = check_threshold(file.pick("threshold", a.threshold, DEFAULT_THRESHOLD)?)?;
    let probe = read_probe(&probe_path)?;
    run.input(&probe_path)?;
    let dataset = read_dataset(&data)?;
    run.input(&data)?;
    let report = evaluate_probe(&probe, &dataset, threshold, ctx.exec)?;
    let mut scores = String::from("id,label,score,predicted\n");
    for s in &report.scores {
        writeln!(scores, "{},{},{},{}", s.id, s.label.label(), s.score, s.predicted.label()).unwrap();
    }
    let mut out = OutDir::create(&out)?;
    out.write_json("metrics.json", &MetricsFile { threshold, metrics: &report.metrics })?;
    out.write_bytes("scores.csv", scores.as_bytes())?;
    let snapshot = json!({ "data": data, "probe": probe_path, "threshold": threshold });
    run.finish(out, ctx, snapshot, None)
}

pub fn pca(ctx: &Context, a: PcaArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref(), &["data", "layers", "no_center", "out"])?;
    let mut run = Run::start("pca");
    let data: PathBuf = file.require("data", a.data)?;
    let out: PathBuf = file.require("out", a.common.out)?;
    let center = !file.pick("no_center", a.no_center.then_some(true), false)?;
    let dataset = read_dataset(&data)?;
    run.input(&data)?;
    let l = dataset.layers();
    let layers: Vec<usize> = file.pick("layers", a.layers, (1..=l).collect())?;
    if let Some(bad) = layers.iter().find(|k| **k == 0 || **k > l) {
        return Err(CliError::usage(format!("layer {bad} outside 1..={l}")));
    }
    let (n, h) = (dataset.len(), dataset.hidden());
    let results = ctx.exec.map(&layers, |&k| {
        let x = DMatrix::from_fn(n, h, |i, j| f64::from(dataset.records()[i].tensor.row(k - 1)[j]));
        pca_2d(&x, center)
    });
    let mut out = OutDir::create(&out)?;
    let mut variance = String::from("layer,explained_ratio_1,explained_ratio_2,variance_1,variance_2\n");
    for (k, res) in layers.iter().zip(results) {
        let res = res?;
        let mut csv = String::from("x,y,label\n");
        for (p, r) in res.projections.iter().zip(dataset.records()) {
            writeln!(csv, "{},{},{}", p[0], p[1], r.label.label()).unwrap();
        }
        out.write_bytes(&format!("pca_layer{k}.csv"), csv.as_bytes())?;
        let [r1, r2] = res.explained_variance_ratio;
        let [v1, v2] = res.explained_variance;
        writeln!(variance, "{k},{r1},{r2},{v1},{v2}").unwrap();
    }
    out.write_bytes("pca_variance.csv", variance.as_bytes())?;
    let snapshot = json!({ "data": data, "layers": layers, "center": center });
    run.finish(out, ctx, snapshot, None)
}

pub fn layers(ctx: &Context, a: LayersArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref(), &["probe", "sigma", "out"])?;
    let mut run = Run::start("layers");
    let probe_path: PathBuf = file.require("probe", a.probe)?;
    let out: PathBuf = file.require("out", a.common.out)?;
    let sigma = file.pick("sigma", a.sigma, DEFAULT_SMOOTHING_SIGMA)?;
    let probe = read_probe(&probe_path)?;
    run.input(&probe_path)?;
    let report = layer_weight_report(&probe, sigma).map_err(|e| match e {
        attriprobe::Error::UnsupportedVariant(m) => CliError::usage(m),
        other => other.into(),
    })?;
    let mut out = OutDir::create(&out)?;
    out.write_bytes("layer_weights.csv", report.to_csv().as_bytes())?;
    out.write_json(
        "layer_weights.json",
        &json!({
            "variant": probe.variant(),
            "sigma": report.sigma,
            "raw_argmax_layer": report.raw_argmax + 1,
            "smoothed_argmax_layer": report.smoothed_argmax + 1,
        }),
    )?;
    run.finish(out, ctx, json!({ "probe": probe_path, "sigma": sigma }), None)
}

pub fn bias(ctx: &Context, a: BiasArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref(), &["data", "folds", "seed", "max_features", "ngram_max", "out"])?;
    let mut run = Run::start("bias");
    let data: PathBuf = file.require("data", a.data)?;
    let out: PathBuf = file.require("out", a.common.out)?;
    let folds = file.pick("folds", a.folds, DEFAULT_FOLDS)?;
    let seed = file.pick("seed", a.seed, DEFAULT_CV_SEED)?;
    let defaults = TfidfConfig::default();
    let tfidf = TfidfConfig {
        max_features: file.pick("max_features", a.max_features, defaults.max_features)?,
        ngram_max: file.pick("ngram_max", a.ngram_max, defaults.ngram_max)?,
    };
    if !(1..=2).contains(&tfidf.ngram_max) || tfidf.max_features == 0 {
        return Err(CliError::usage("--ngram-max must be 1 or 2 and --max-features positive"));
    }
    let examples = read_bias_examples(BufReader::new(File::open(&data)?))?;
    run.input(&data)?;
    let report = cross_validate_bias(&examples, folds, seed, tfidf, ctx.exec)?;
    let mut out = OutDir::create(&out)?;
    out.write_json("bias_report.json", &report)?;
    let snapshot = json!({ "data": data, "folds": folds, "seed": seed, "tfidf": tfidf });
    run.finish(out, ctx, snapshot, Some(seed))
}

#[derive(Serialize)]
struct MismatchFile {
    #[serde(flatten)]
    report: MismatchReport,
    n_records: usize,
    /// Dataset records lacking `correct` or `source_required`.
    skipped: usize,
}

fn read_mismatch_records(path: &Path) -> CliResult<Vec<MismatchRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn mismatch(ctx: &Context, a: MismatchArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref(), &["records", "data", "probe", "threshold", "out"])?;
    let mut run = Run::start("mismatch");
    let out: PathBuf = file.require("out", a.common.out)?;
    let records_path: Option<PathBuf> = file.pick_opt("records", a.records)?;
    let data: Option<PathBuf> = file.pick_opt("data", a.data)?;
    let probe_path: Option<PathBuf> = file.pick_opt("probe", a.probe)?;
    let threshold = check_threshold(file.pick("threshold", a.threshold, DEFAULT_THRESHOLD)?)?;
    let (records, skipped, snapshot) = match (records_path, data, probe_path) {
        (Some(r), None, None) => {
            run.input(&r)?;
            (read_mismatch_records(&r)?, 0, json!({ "records": r }))
        }
        (None, Some(d), Some(p)) => {
            let probe = read_probe(&p)?;
            run.input(&p)?;
            let dataset = read_dataset(&d)?;
            run.input(&d)?;
            let (recs, skipped) = mismatch_records(&probe, &dataset, threshold, ctx.exec)?;
            (recs, skipped, json!({ "data": d, "probe": p, "threshold": threshold }))
        }
        _ => return Err(CliError::usage("give either --records, or both --data and --probe")),
    };
    let report = mismatch_analysis(&records);
    for c in &report.conditions {
        for w in &c.warnings {
            log::warn!("{}: {w}", c.condition);
        }
    }
    let mut out = OutDir::create(&out)?;
    out.write_json("mismatch.json", &MismatchFile { report, n_records: records.len(), skipped })?;
    run.finish(out, ctx, snapshot, None)
}

pub fn synth(ctx: &Context, a: SynthArgs) -> CliResult<()> {
    const KEYS: &[&str] = &[
        "layers", "hidden", "planted_layer", "mu", "noise", "n_per_class", "titles", "seed", "rho", "decoy_layer",
        "decoy_mu", "decoy_kind", "test_n_per_class", "out",
    ];
    let file = FileConfig::load(a.common.config.as_deref(), KEYS)?;
    let run = Run::start("synth");
    let out: PathBuf = file.require("out", a.common.out)?;
    let d = SynthSpec::default();
    let layers = file.pick("layers", a.layers, d.layers)?;
    let planted: usize = file.pick("planted_layer", a.planted_layer, (d.planted_layer + 1).min(layers))?;
    if planted == 0 || planted > layers {
        return Err(CliError::usage(format!("--planted-layer must lie in 1..={layers}")));
    }
    let spec = SynthSpec {
        layers,
        hidden: file.pick("hidden", a.hidden, d.hidden)?,
        planted_layer: planted - 1,
        separation: file.pick("mu", a.mu, d.separation)?,
        noise: file.pick("noise", a.noise, d.noise)?,
        n_per_class: file.pick("n_per_class", a.n_per_class, d.n_per_class)?,
        title_count: file.pick("titles", a.titles, d.title_count)?,
        seed: file.pick("seed", a.seed, d.seed)?,
    };
    spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let rho: Option<f64> = file.pick_opt("rho", a.rho)?;
    let mut out = OutDir::create(&out)?;
    match rho {
        None => {
            let (dataset, truth) = generate(&spec, ctx.exec)?;
            out.write_dataset("dataset.atrw", &dataset)?;
            out.write_json("ground_truth.json", &truth)?;
        }
        Some(rho) => {
            let decoy_layer: usize = file.pick("decoy_layer", a.decoy_layer, 2.min(layers))?;
            if decoy_layer == 0 || decoy_layer > layers {
                return Err(CliError::usage(format!("--decoy-layer must lie in 1..={layers}")));
            }
            let kind: String = file.pick("decoy_kind", a.decoy_kind, "signed".into())?;
            let kind: DecoyKind = serde_json::from_value(Value::String(kind.clone()))
                .map_err(|_| CliError::usage(format!("unknown decoy kind {kind:?}")))?;
            let decoy = DecoySpec {
                layer: decoy_layer - 1,
                separation: file.pick("decoy_mu", a.decoy_mu, 5.0)?,
                rho,
                test_n_per_class: file.pick("test_n_per_class", a.test_n_per_class, spec.n_per_class)?,
                kind,
            };
            let sets = generate_decoy(&spec, &decoy, ctx.exec).map_err(|e| match e {
                attriprobe::Error::InvalidConfig(m) => CliError::usage(m),
                other => other.into(),
            })?;
            out.write_dataset("train.atrw", &sets.train)?;
            out.write_dataset("test_iid.atrw", &sets.test_in_distribution)?;
            out.write_dataset("test_shift.atrw", &sets.test_shifted)?;
            out.write_json("ground_truth.json", &sets.ground_truth)?;
        }
    }
    let seed = spec.seed;
    run.finish(out, ctx, json!({ "spec": spec, "rho": rho }), Some(seed))
}

pub fn grid(ctx: &Context, a: GridArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref(), &["data", "variant", "seed", "epochs_per_config", "out"])?;
    let mut run = Run::start("grid");
    let data: PathBuf = file.require("data", a.data)?;
    let out: PathBuf = file.require("out", a.common.out)?;
    let variant = parse_variant(&file.pick("variant", a.variant, Variant::LayerLr.name().to_owned())?)?;
    if variant == Variant::FinalLr {
        return Err(CliError::usage("grid search covers layer-lr and layer-mlp only"));
    }
    let mut base = TrainConfig::for_variant(variant);
    base.seed = file.pick("seed", a.seed, base.seed)?;
    let mut space = GridSpace::default();
    space.epochs_per_config = file.pick("epochs_per_config", a.epochs_per_config, space.epochs_per_config)?;
    if space.epochs_per_config == 0 {
        return Err(CliError::usage("--epochs-per-config must be positive"));
    }
    let dataset = read_dataset(&data)?;
    run.input(&data)?;
    let result = grid_search(&dataset, &space, variant, &base, ctx.exec)?;
    info!("grid: {} configurations, best #{}", result.entries.len(), result.best_index);
    let mut out = OutDir::create(&out)?;
    out.write_json(
        "grid.json",
        &json!({
            "variant": variant,
            "space": space,
            "n_configs": result.entries.len(),
            "best_index": result.best_index,
            "best": result.best,
            "entries": result.entries,
        }),
    )?;
    let snapshot = json!({ "data": data, "variant": variant, "space": space, "seed": base.seed });
    run.finish(out, ctx, snapshot, Some(base.seed))
}
