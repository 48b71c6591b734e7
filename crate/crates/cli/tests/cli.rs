// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attriprobe::store::{sidecar_path, write_dataset};
use attriprobe::synth::marker_corpus;
use attriprobe::{ActivationRecord, Dataset, LayerStack, Source, TokenTag, TrainConfig, Variant};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attriprobe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("ATTRIPROBE_THREADS").output().expect("spawn attriprobe")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn output_digests(dir: &Path) -> BTreeMap<String, String> {
    serde_json::from_value(read_json(&dir.join("manifest.json"))["outputs"].clone()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Small planted dataset written by the `synth` command.
    fn synth(&self) -> PathBuf {
        let out = self.path("synth");
        if !out.exists() {
            ok(&[
                "synth", "--layers", "4", "--hidden", "8", "--planted-layer", "3", "--n-per-class", "120",
                "--titles", "40", "--seed", "7", "--out", s(&out),
            ]);
        }
        out.join("dataset.atrw")
    }

    fn trained(&self, variant: &str) -> PathBuf {
        let out = self.path(&format!("train-{variant}"));
        if !out.exists() {
            ok(&["train", "--data", s(&self.synth()), "--variant", variant, "--epochs", "60", "--out", s(&out)]);
        }
        out
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }
}

fn mismatch_lines(table: [[usize; 2]; 2]) -> String {
    let mut text = String::new();
    for (aligned, row) in [(true, table[0]), (false, table[1])] {
        for (correct, n) in [(true, row[0]), (false, row[1])] {
            let predicted = if aligned { "parametric" } else { "contextual" };
            for _ in 0..n {
                text += &format!(
                    "{{\"source_required\":\"parametric\",\"predicted\":\"{predicted}\",\"correct\":{correct}}}\n"
                );
            }
        }
    }
    text
}

#[test]
fn every_command_is_reproducible() {
    let fx = Fixture::new();
    let data = fx.synth();
    let probe = fx.trained("layer-lr").join("probe.atrp");
    let corpus: String = marker_corpus(40, true, 3)
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    let bias_data = fx.write("bias.jsonl", &corpus);
    let records = fx.write("records.jsonl", &mismatch_lines([[3, 1], [1, 3]]));

    let commands: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth", "--layers", "3", "--hidden", "4", "--n-per-class", "30", "--titles", "10"]),
        (
            "synth-decoy",
            vec!["synth", "--layers", "3", "--hidden", "4", "--n-per-class", "30", "--titles", "10", "--rho", "0.9",
                 "--decoy-layer", "1", "--test-n-per-class", "20"],
        ),
        ("train", vec!["train", "--data", s(&data), "--variant", "layer-mlp", "--m", "8", "--epochs", "5"]),
        ("train-final", vec!["train", "--data", s(&data), "--variant", "final-lr"]),
        ("eval", vec!["eval", "--data", s(&data), "--probe", s(&probe)]),
        ("pca", vec!["pca", "--data", s(&data), "--layers", "1,3"]),
        ("layers", vec!["layers", "--probe", s(&probe), "--sigma", "0.5"]),
        ("bias", vec!["bias", "--data", s(&bias_data), "--folds", "4"]),
        ("mismatch", vec!["mismatch", "--records", s(&records)]),
        ("mismatch-probe", vec!["mismatch", "--data", s(&data), "--probe", s(&probe)]),
        ("grid", vec!["grid", "--data", s(&data), "--epochs-per-config", "2"]),
    ]
    .into_iter()
    .map(|(n, v)| (n, v.into_iter().map(String::from).collect()))
    .collect();

    for (name, args) in commands {
        let mut digests = Vec::new();
        for (i, extra) in [&[][..], &["--sequential"][..]].iter().enumerate() {
            let out = fx.path(&format!("det-{name}-{i}"));
            let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
            argv.extend_from_slice(extra);
            argv.extend(["--out", s(&out)]);
            ok(&argv);
            let d = output_digests(&out);
            assert!(!d.is_empty(), "{name}: no outputs recorded");
            for (file, digest) in &d {
                let bytes = fs::read(out.join(file)).unwrap();
                assert_eq!(&hex_sha256(&bytes), digest, "{name}: stale digest for {file}");
            }
            digests.push(d);
        }
        assert_eq!(digests[0], digests[1], "{name}: outputs differ between runs");
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn thread_count_does_not_change_outputs() {
    let fx = Fixture::new();
    let data = fx.synth();
    let mut digests = Vec::new();
    for threads in ["1", "3"] {
        let out = fx.path(&format!("grid-{threads}"));
        let status = bin()
            .args(["grid", "--data", s(&data), "--variant", "layer-mlp", "--epochs-per-config", "1", "--out", s(&out)])
            .env("ATTRIPROBE_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        assert_eq!(read_json(&out.join("manifest.json"))["threads"], threads.parse::<u64>().unwrap());
        digests.push(output_digests(&out));
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn exit_codes_partition_errors() {
    let fx = Fixture::new();
    let data = fx.synth();
    let out = fx.path("err");
    let o = s(&out);
    let d = s(&data);
    assert_eq!(code(&["train", "--data", d, "--variant", "final-lr", "--dropout", "0.2", "--out", o]), 2);
    assert_eq!(code(&["train", "--data", d, "--variant", "layer-lr", "--m", "16", "--out", o]), 2);
    assert_eq!(code(&["train", "--data", d, "--variant", "cnn", "--out", o]), 2);
    assert_eq!(code(&["train", "--data", d, "--lr", "-1", "--out", o]), 2);
    assert_eq!(code(&["train", "--bogus-flag"]), 2);
    assert_eq!(code(&["eval", "--data", d, "--probe", s(&fx.path("missing.atrp")), "--out", o]), 3);
    assert_eq!(code(&["eval", "--data", d, "--probe", s(&fx.path("missing.atrp")), "--threshold", "2", "--out", o]), 2);
    assert_eq!(code(&["pca", "--data", d, "--layers", "9", "--out", o]), 2);
    let final_probe = fx.trained("final-lr").join("probe.atrp");
    assert_eq!(code(&["layers", "--probe", s(&final_probe), "--out", o]), 2);
    assert_eq!(code(&["grid", "--data", d, "--variant", "final-lr", "--out", o]), 2);
    let garbage = fx.write("garbage.atrw", "not a dataset");
    assert_eq!(code(&["pca", "--data", s(&garbage), "--out", o]), 3);
    let cfg = fx.write("bad.json", r#"{"epochz": 3}"#);
    assert_eq!(code(&["train", "--config", s(&cfg), "--data", d, "--out", o]), 2);
    let bad_records = fx.write("bad.jsonl", "{\"source_required\":\"parametric\"}\n");
    assert_eq!(code(&["mismatch", "--records", s(&bad_records), "--out", o]), 3);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn eval_reproduces_train_time_metrics() {
    let fx = Fixture::new();
    for variant in ["layer-lr", "layer-mlp", "final-lr"] {
        let train = fx.trained(variant);
        let out = fx.path(&format!("eval-{variant}"));
        ok(&["eval", "--data", s(&train.join("heldout.atrw")), "--probe", s(&train.join("probe.atrp")), "--out", s(&out)]);
        assert_eq!(fs::read(train.join("metrics.json")).unwrap(), fs::read(out.join("metrics.json")).unwrap());
    }
    let summary = read_json(&fx.trained("layer-lr").join("summary.json"));
    assert!(summary["test_metrics"]["macro_f1"].as_f64().unwrap() > 0.9);
    let layers = fx.path("layers");
    ok(&["layers", "--probe", s(&fx.trained("layer-lr").join("probe.atrp")), "--out", s(&layers)]);
    let csv = fs::read_to_string(layers.join("layer_weights.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "layer,raw,smoothed");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn train_defaults_are_recorded() {
    let fx = Fixture::new();
    let out = fx.path("defaults");
    ok(&["train", "--data", s(&fx.synth()), "--variant", "layer-mlp", "--epochs", "1", "--out", s(&out)]);
    let cfg = &read_json(&out.join("manifest.json"))["config"]["train"];
    let expected = TrainConfig { max_epochs: 1, ..TrainConfig::for_variant(Variant::LayerMlp) };
    assert_eq!(cfg, &serde_json::to_value(expected).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let fx = Fixture::new();
    let data = fx.synth();
    let cfg = fx.write("cfg.json", &format!(r#"{{"data": "{}", "epochs": 2, "variant": "layer-lr", "seed": 5}}"#, s(&data)));
    let out = fx.path("cfg-run");
    ok(&["train", "--config", s(&cfg), "--seed", "6", "--out", s(&out)]);
    let train = &read_json(&out.join("manifest.json"))["config"]["train"];
    assert_eq!(train["max_epochs"], 2);
    assert_eq!(train["seed"], 6);
}

#[test]
fn mismatch_fixture_p_value() {
    let fx = Fixture::new();
    let records = fx.write("records.jsonl", &mismatch_lines([[3, 1], [1, 3]]));
    let out = fx.path("mm");
    ok(&["mismatch", "--records", s(&records), "--out", s(&out)]);
    let report = read_json(&out.join("mismatch.json"));
    let cond = &report["conditions"][0];
    assert_eq!(cond["condition"], "parametric-required");
    assert!((cond["p_value"].as_f64().unwrap() - 0.4857).abs() < 1e-4);
    assert!((cond["relative_risk"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!(report["conditions"][1]["p_value"].is_null());
    assert_eq!(report["sidedness"], "two-sided");
}

#[test]
fn pca_reports_unit_ratio_for_rank_one_layer() {
    let fx = Fixture::new();
    let records = (0..30)
        .map(|i| {
            let t = i as f32 / 7.0 - 2.0;
            let mut data = vec![1.0 + t, 2.0 - 2.0 * t, 0.5 * t, 3.0];
            data.extend((0..4).map(|j| ((i * 7 + j * 3) % 11) as f32));
            ActivationRecord {
                id: format!("r{i}"),
                label: if i % 2 == 0 { Source::Contextual } else { Source::Parametric },
                title: format!("t{i}"),
                token_tag: TokenTag::Ftg,
                tensor: LayerStack::new(2, 4, data).unwrap(),
                correct: None,
                source_required: None,
                model_id: "m".into(),
            }
        })
        .collect();
    let path = fx.path("rank1.atrw");
    write_dataset(&Dataset::from_records(records).unwrap(), &path).unwrap();
    let out = fx.path("pca");
    ok(&["pca", "--data", s(&path), "--out", s(&out)]);
    let variance = fs::read_to_string(out.join("pca_variance.csv")).unwrap();
    let row: Vec<f64> = variance.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 1.0);
    assert!((row[1] - 1.0).abs() <= 1e-9, "{variance}");
    let points = fs::read_to_string(out.join("pca_layer2.csv")).unwrap();
    assert_eq!(points.lines().count(), 31);
}

#[test]
fn synth_writes_ground_truth_with_one_based_layer_flag() {
    let fx = Fixture::new();
    let out = fx.path("gt");
    ok(&["synth", "--layers", "3", "--hidden", "2", "--planted-layer", "3", "--n-per-class", "5", "--titles", "5", "--out", s(&out)]);
    let truth = read_json(&out.join("ground_truth.json"));
    assert_eq!(truth["spec"]["planted_layer"], 2);
    assert!(sidecar_path(&out.join("dataset.atrw")).exists());
    assert_eq!(code(&["synth", "--layers", "3", "--planted-layer", "4", "--out", s(&fx.path("bad"))]), 2);
}
