use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ndarray::Array2;
use protoadapt::bayes_adapter::VariationalPosterior;
use protoadapt::data::{load_badf, save_badf, BadfFile, LoadOptions};
use protoadapt::metrics::PredictionRecord;
use protoadapt::model::{FeatureSet, Prototypes, WeightMatrix};
use protoadapt_cli::commands::Manifest;
use protoadapt_cli::config::Method;
use protoadapt_cli::report::{MethodReport, Report};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protoadapt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic dataset in a fresh temp dir.
fn synth(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let path = dir.path().join("data.badf");
    let mut args = vec!["synth", "--out", s(&path), "--per-class", "60"];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

fn schema() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/report.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn assert_valid(report: &Value) {
    let validator = jsonschema::validator_for(&schema()).unwrap();
    let errors: Vec<String> = validator.iter_errors(report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

#[test]
fn train_bayes_writes_checkpoint_and_manifest_quickly() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let ckpt = dir.path().join("bayes.badf");
    let start = Instant::now();
    ok(&[
        "train",
        "--data",
        s(&data),
        "--method",
        "bayes",
        "--shots",
        "4",
        "--seed",
        "0",
        "--out",
        s(&ckpt),
    ]);
    assert!(start.elapsed() < Duration::from_secs(10));

    let file = load_badf(&ckpt, LoadOptions::default()).unwrap();
    assert_eq!(file.features.len(), 4 * 5);
    assert!(file.posterior().unwrap().is_some());
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(ckpt.with_extension("json")).unwrap()).unwrap();
    assert_eq!(manifest.config.method, Method::Bayes);
    assert_eq!(manifest.config.shots, 4);
    assert_eq!(manifest.trajectory.len(), 300);
    assert_eq!(manifest.split.support, 20);
}

#[test]
fn zero_epochs_checkpoint_is_the_initialisation() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let protos = load_badf(&data, LoadOptions::default()).unwrap().prototypes;
    for method in ["map", "bayes"] {
        let ckpt = dir.path().join(format!("{method}.badf"));
        ok(&[
            "train",
            "--data",
            s(&data),
            "--method",
            method,
            "--epochs",
            "0",
            "--prior-std",
            "0.05",
            "--out",
            s(&ckpt),
        ]);
        let file = load_badf(&ckpt, LoadOptions::default()).unwrap();
        // f32 storage of an f32-loaded matrix is exact
        if method == "map" {
            assert_eq!(file.map_weights().unwrap().unwrap().view(), protos.matrix());
        } else {
            let q = file.posterior().unwrap().unwrap();
            assert_eq!(q.mean(), protos.matrix());
            for &ls in q.log_std() {
                assert_eq!(ls, (0.05f64.ln() as f32) as f64);
            }
        }
    }
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let missing = dir.path().join("missing.badf");
    let ckpt = dir.path().join("c.badf");

    assert_eq!(run(&["eval", "--data", s(&missing)]).status.code(), Some(3));
    assert_eq!(run(&["train", "--data", s(&data), "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["train", "--data", s(&data), "--lr", "-1", "--out", s(&ckpt)])
            .status
            .code(),
        Some(2)
    );
    // 60 samples per class cannot supply 61 shots
    assert_eq!(
        run(&["train", "--data", s(&data), "--shots", "61", "--out", s(&ckpt)])
            .status
            .code(),
        Some(4)
    );
    let runaway = run(&[
        "train",
        "--data",
        s(&data),
        "--method",
        "map",
        "--lr",
        "1e300",
        "--epochs",
        "3",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(
        runaway.status.code(),
        Some(5),
        "{}",
        String::from_utf8_lossy(&runaway.stderr)
    );

    let mut bytes = std::fs::read(&data).unwrap();
    bytes[0] = b'X';
    let corrupt = dir.path().join("corrupt.badf");
    std::fs::write(&corrupt, &bytes).unwrap();
    assert_eq!(run(&["eval", "--data", s(&corrupt)]).status.code(), Some(4));
}

#[test]
fn eval_rejects_method_and_shape_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let ckpt = dir.path().join("b.badf");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--method",
        "bayes",
        "--epochs",
        "2",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(
        run(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--method", "map"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(
        run(&["eval", "--data", s(&data), "--method", "bayes"]).status.code(),
        Some(2)
    );

    let other = dir.path().join("other.badf");
    ok(&["synth", "--out", s(&other), "--dim", "8", "--per-class", "20"]);
    assert_eq!(
        run(&["eval", "--data", s(&other), "--checkpoint", s(&ckpt)])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn collapsed_posterior_evaluates_like_its_mean() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let file = load_badf(&data, LoadOptions::default()).unwrap();
    let (c, d) = file.prototypes.matrix().dim();
    let mean = Array2::from_shape_fn((c, d), |(i, j)| {
        file.prototypes.matrix()[[i, j]] + 0.01 * ((i * d + j) as f64).sin()
    });

    let support = file.features.subset(&[0, 1, 2]);
    let mut bayes = BadfFile::new(support.clone(), file.prototypes.clone(), true).unwrap();
    bayes
        .set_posterior(&VariationalPosterior::new(mean.clone(), vec![-30.0; c]).unwrap())
        .unwrap();
    let mut map = BadfFile::new(support, file.prototypes.clone(), true).unwrap();
    map.set_map_weights(&WeightMatrix::new(mean).unwrap()).unwrap();
    let (bp, mp) = (dir.path().join("q.badf"), dir.path().join("w.badf"));
    save_badf(&bp, &bayes).unwrap();
    save_badf(&mp, &map).unwrap();

    let eval = |ckpt: &Path| -> MethodReport {
        let out = ok(&[
            "eval",
            "--data",
            s(&data),
            "--checkpoint",
            s(ckpt),
            "--mc-predict",
            "5",
            "--deterministic",
        ]);
        let r: Report = serde_json::from_slice(&out.stdout).unwrap();
        r.methods.into_iter().next().unwrap()
    };
    let (b, m) = (eval(&bp), eval(&mp));
    assert_eq!((b.method, m.method), (Method::Bayes, Method::Map));
    for (x, y) in [
        (b.accuracy, m.accuracy),
        (b.ece, m.ece),
        (b.aece, m.aece),
        (b.mean_confidence, m.mean_confidence),
    ] {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    for (cb, cm) in b.coverage.iter().zip(&m.coverage) {
        assert!((cb.coverage - cm.coverage).abs() <= 1e-9);
        assert!((cb.classwise_coverage - cm.classwise_coverage).abs() <= 1e-9);
        assert_eq!(cb.reliable, cm.reliable);
    }
    for (xb, xm) in b.bins.iter().zip(&m.bins) {
        assert_eq!(xb.count, xm.count);
    }
}

#[test]
fn reports_validate_against_published_schema() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let out = ok(&["compare", "--data", s(&data), "--shots", "4", "--epochs", "5"]);
    let compare: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid(&compare);
    assert!(compare.get("elapsed_ms").is_some());

    let out = ok(&["eval", "--data", s(&data), "--deterministic", "--levels", "0.99,0.5"]);
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid(&eval);
    assert!(eval.get("elapsed_ms").is_none());

    let mut broken = eval.clone();
    broken["methods"][0]["accuracy"] = 1.5.into();
    let validator = jsonschema::validator_for(&schema()).unwrap();
    assert!(!validator.is_valid(&broken));
}

#[test]
fn report_builder_matches_golden_prediction_oracle() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/golden_predictions.json"
    ))
    .unwrap();
    let golden: Value = serde_json::from_str(&text).unwrap();
    let records: Vec<PredictionRecord> = golden["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| PredictionRecord {
            confidence: r[0].as_f64().unwrap(),
            predicted: r[1].as_u64().unwrap() as usize,
            label: r[2].as_u64().unwrap() as usize,
        })
        .collect();
    let levels: Vec<f64> = serde_json::from_value(golden["levels"].clone()).unwrap();
    let classes = golden["num_classes"].as_u64().unwrap() as usize;
    let bins = golden["bins"].as_u64().unwrap() as usize;
    let rep = MethodReport::from_records(Method::Bayes, &records, &levels, bins, classes).unwrap();

    let exp = &golden["expected"];
    let close = |a: f64, b: &Value| assert!((a - b.as_f64().unwrap()).abs() <= 1e-12, "{a} vs {b}");
    close(rep.accuracy, &exp["accuracy"]);
    close(rep.ece, &exp["ece"]);
    close(rep.aece, &exp["aece"]);
    for (got, want) in rep.coverage.iter().zip(exp["coverage"].as_array().unwrap()) {
        close(got.level, &want["level"]);
        close(got.coverage, &want["coverage"]);
        close(got.classwise_coverage, &want["classwise_coverage"]);
        assert_eq!(got.selected as u64, want["selected"].as_u64().unwrap());
        assert_eq!(got.reliable, want["reliable"].as_bool().unwrap());
        match (got.selected_accuracy, want["selected_accuracy"].as_f64()) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
            (None, None) => {}
            other => panic!("selected_accuracy mismatch {other:?}"),
        }
    }
}

#[test]
fn compare_is_byte_deterministic_with_three_rows() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let args = [
        "compare",
        "--data",
        s(&data),
        "--shots",
        "8",
        "--epochs",
        "20",
        "--format",
        "csv",
        "--deterministic",
    ];
    let a = ok(&args).stdout;
    let b = ok(&args).stdout;
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, name) in rows.iter().zip(["zeroshot", "map", "bayes"]) {
        assert!(row.starts_with(&format!("{name},")), "{row}");
    }
}

#[test]
fn noiseless_data_gives_perfect_accuracy_for_every_method() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &["--spread", "0", "--noise", "0"]);
    let out = ok(&[
        "compare",
        "--data",
        s(&data),
        "--shots",
        "4",
        "--epochs",
        "30",
        "--deterministic",
    ]);
    let r: Report = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.methods.len(), 3);
    for m in &r.methods {
        assert_eq!(m.accuracy, 1.0, "{}", m.method);
    }
}

#[test]
fn rerun_from_manifest_reproduces_checkpoint() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let first = dir.path().join("first.badf");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--method",
        "bayes",
        "--shots",
        "2",
        "--epochs",
        "15",
        "--seed",
        "7",
        "--deterministic",
        "--out",
        s(&first),
    ]);
    let second = dir.path().join("second.badf");
    let manifest = first.with_extension("json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&manifest),
        "--out",
        s(&second),
    ]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let m1: Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    let m2: Value = serde_json::from_slice(&std::fs::read(second.with_extension("json")).unwrap()).unwrap();
    assert_eq!(m1["config"], m2["config"]);
    assert_eq!(m1["trajectory"], m2["trajectory"]);
}

#[test]
fn query_split_excludes_the_training_support() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, &[]);
    let out = ok(&[
        "eval",
        "--data",
        s(&data),
        "--split",
        "query",
        "--shots",
        "10",
        "--format",
        "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("method,metric,level,bin,value\nzeroshot,accuracy,,,"));
    let out = ok(&["eval", "--data", s(&data), "--split", "query", "--shots", "10"]);
    let r: Report = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.split.evaluated, 5 * 50);
    assert_eq!(r.methods[0].samples, 250);

    // a features-only dataset round-trips through FeatureSet/Prototypes too
    let fs = FeatureSet::new(Array2::eye(2), vec![0, 1]).unwrap();
    let p = Prototypes::new(Array2::eye(2)).unwrap();
    let tiny = dir.path().join("tiny.badf");
    save_badf(&tiny, &BadfFile::new(fs, p, true).unwrap()).unwrap();
    let out = ok(&["eval", "--data", s(&tiny), "--bins", "2", "--levels", "0.5"]);
    let r: Report = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.methods[0].accuracy, 1.0);
}
