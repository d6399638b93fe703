use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use adens::config::RunConfig;
use adens::corpus::read_jsonl;
use serde_json::{json, Value};
use tempfile::TempDir;

fn adens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adens"))
        .args(args)
        .env_remove("ADENS_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn small_spec(classes: &str, drift: f64) -> Value {
    json!({
        "n_source_labeled": 200,
        "n_target_unlabeled": 200,
        "n_target_labeled_dev": 40,
        "n_target_labeled_test": 40,
        "decades": [1950, 1960, 1970],
        "classes": classes,
        "drift": drift,
        "seed": 5,
        "keywords_per_class": 6,
        "filler_vocab": 50,
        "keyword_rate": 0.3,
        "min_doc_len": 4,
        "max_doc_len": 12
    })
}

fn gen_corpus(tmp: &Path, classes: &str) -> PathBuf {
    let spec = tmp.join("spec.json");
    write(&spec, &small_spec(classes, 0.5));
    let out = tmp.join("corpus");
    let o = adens(&["gen-corpus", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn run_config(mode: &str, classes: &str) -> Value {
    let head = if classes == "binary" { "softmax" } else { "sigmoid" };
    let k = if classes == "binary" { 2 } else { 3 };
    json!({
        "task": classes,
        "mode": mode,
        "model": {
            "n_layers": 2, "channels": 8, "filter_size": 3, "dilation_base": 2, "emb_dim": 8,
            "time_emb_dim": 2, "dropout": 0.2, "noise_std": 0.2, "max_len": 7, "n_classes": k, "head": head
        },
        "lr": 1e-2,
        "batch_size": 16,
        "epochs": 3,
        "seed": 3,
        "allow_off_grid": true,
        "data": {
            "source": "corpus/source.jsonl",
            "target_unlabeled": "corpus/target_unlabeled.jsonl",
            "dev": "corpus/dev.jsonl",
            "test": "corpus/test.jsonl"
        }
    })
}

fn train(tmp: &Path, cfg: &Value, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let path = tmp.join(format!("{name}.json"));
    write(&path, cfg);
    let out = tmp.join(name);
    let mut args = vec!["train", p(&path), "--out", p(&out)];
    args.extend_from_slice(extra);
    (adens(&args), out)
}

#[test]
fn gen_corpus_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    write(&spec, &small_spec("binary", 0.5));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(adens(&["gen-corpus", p(&spec), "--out", p(&a)]).status.success());
    assert!(adens(&["gen-corpus", p(&spec), "--out", p(&b)]).status.success());
    for f in [
        "source.jsonl",
        "target_unlabeled.jsonl",
        "dev.jsonl",
        "test.jsonl",
        "generation_report.json",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let unlabeled = read_jsonl(a.join("target_unlabeled.jsonl")).unwrap();
    assert!(unlabeled.iter().all(|d| d.labels.is_none()));
    assert_eq!(read_jsonl(a.join("source.jsonl")).unwrap().len(), 200);
}

#[test]
fn gen_corpus_without_drift_has_full_overlap() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    let mut s = small_spec("binary", 0.0);
    s["n_source_labeled"] = json!(1000);
    write(&spec, &s);
    let out = tmp.path().join("c");
    assert!(adens(&["gen-corpus", p(&spec), "--out", p(&out)]).status.success());
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("generation_report.json")).unwrap()).unwrap();
    for (decade, v) in report["overlap_by_decade"].as_object().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 100.0, "decade {decade}");
    }
}

#[test]
fn gen_corpus_rejects_empty_decades() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    let mut s = small_spec("binary", 0.5);
    s["decades"] = json!([]);
    write(&spec, &s);
    let o = adens(&["gen-corpus", p(&spec), "--out", p(&tmp.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("decades"), "{}", stderr(&o));
}

#[test]
fn train_writes_artifacts_quickly() {
    let tmp = TempDir::new().unwrap();
    gen_corpus(tmp.path(), "binary");
    let start = Instant::now();
    let (o, dir) = train(tmp.path(), &run_config("source_only", "binary"), "so", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs() < 60);
    for f in [
        "checkpoint.json",
        "metrics_history.json",
        "diagnostics.csv",
        "manifest.json",
        "latents.csv",
        "test_metrics.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(!dir.join("adaptive_constants.json").exists());
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["corpus_checksums"]["data.source"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["steps"], json!(39));
}

#[test]
fn train_twice_gives_identical_history_and_diagnostics() {
    let tmp = TempDir::new().unwrap();
    gen_corpus(tmp.path(), "binary");
    let cfg = run_config("ae", "binary");
    let (o1, a) = train(tmp.path(), &cfg, "a", &[]);
    let (o2, b) = train(tmp.path(), &cfg, "b", &[]);
    assert!(o1.status.success() && o2.status.success());
    for f in [
        "metrics_history.json",
        "diagnostics.csv",
        "checkpoint.json",
        "adaptive_constants.json",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_reports_missing_data_file() {
    let tmp = TempDir::new().unwrap();
    gen_corpus(tmp.path(), "binary");
    let mut cfg = run_config("se", "binary");
    cfg["data"]["dev"] = json!("corpus/nope.jsonl");
    let (o, _) = train(tmp.path(), &cfg, "x", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"), "{}", stderr(&o));
}

#[test]
fn train_rejects_off_grid_values_without_override() {
    let tmp = TempDir::new().unwrap();
    gen_corpus(tmp.path(), "binary");
    let mut cfg = run_config("se", "binary");
    cfg["allow_off_grid"] = json!(false);
    let (o, _) = train(tmp.path(), &cfg, "x", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lr"), "{}", stderr(&o));
    let (o, _) = train(tmp.path(), &cfg, "y", &["--override", "--set", "epochs=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn eval_scores_an_overfit_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen_corpus(tmp.path(), "binary");
    let mut cfg = run_config("source_only", "binary");
    cfg["epochs"] = json!(30);
    cfg["model"]["dropout"] = json!(0.0);
    cfg["model"]["noise_std"] = json!(0.0);
    cfg["data"]["dev"] = json!("corpus/source.jsonl");
    let (o, dir) = train(tmp.path(), &cfg, "fit", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = dir.join("checkpoint.json");
    let m1 = tmp.path().join("m1.json");
    let m2 = tmp.path().join("m2.json");
    let src = corpus.join("source.jsonl");
    assert!(adens(&["eval", p(&ckpt), p(&src), "--out", p(&m1)]).status.success());
    assert!(adens(&["eval", p(&ckpt), p(&src), "--out", p(&m2)]).status.success());
    let a = std::fs::read(&m1).unwrap();
    assert_eq!(a, std::fs::read(&m2).unwrap());
    let metrics: Value = serde_json::from_slice(&a).unwrap();
    assert!(metrics["macro_f1"].as_f64().unwrap() >= 0.99, "{metrics}");

    let o = adens(&["eval", p(&ckpt), p(&corpus.join("target_unlabeled.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("labels required"), "{}", stderr(&o));
}

#[test]
fn extract_keeps_positive_documents() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen_corpus(tmp.path(), "binary");
    let (o, dir) = train(tmp.path(), &run_config("se", "binary"), "se", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("ex");
    let input = corpus.join("target_unlabeled.jsonl");
    let o = adens(&["extract", p(&dir.join("checkpoint.json")), p(&input), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kept = read_jsonl(out.join("subcorpus.jsonl")).unwrap();
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("extraction_report.json")).unwrap()).unwrap();
    assert_eq!(report["total"].as_u64().unwrap() as usize, kept.len());
    assert_eq!(report["input_total"], json!(200));
    let per_decade: u64 = report["per_decade"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(per_decade as usize, kept.len());
}

#[test]
fn extract_refuses_multilabel_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let corpus = gen_corpus(tmp.path(), "multilabel");
    let mut cfg = run_config("source_only", "multilabel");
    cfg["epochs"] = json!(1);
    let (o, dir) = train(tmp.path(), &cfg, "ml", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let input = corpus.join("target_unlabeled.jsonl");
    let o = adens(&[
        "extract",
        p(&dir.join("checkpoint.json")),
        p(&input),
        "--out",
        p(&tmp.path().join("ex")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("binary"), "{}", stderr(&o));
}

fn csv_header(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn diagnose_emits_plot_data() {
    let tmp = TempDir::new().unwrap();
    gen_corpus(tmp.path(), "binary");
    let (o, se) = train(tmp.path(), &run_config("se", "binary"), "se", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (o, ae) = train(tmp.path(), &run_config("ae", "binary"), "ae", &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    assert!(adens(&["diagnose", p(&se)]).status.success());
    assert!(se.join("loss_curves.csv").is_file());
    assert!(se.join("pca_points.csv").is_file());
    assert!(!se.join("c_trajectories.csv").exists());
    assert!(!se.join("c_histograms.csv").exists());

    let out = tmp.path().join("plots");
    assert!(adens(&["diagnose", p(&ae), "--out", p(&out)]).status.success());
    let rows = std::fs::read_to_string(out.join("loss_curves.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 39);
    let samples = csv_header(&out.join("c_trajectories.csv"))
        .iter()
        .filter(|c| c.starts_with("c_sample_"))
        .count();
    assert_eq!(samples, 5);
    assert!(out.join("c_histograms.csv").is_file());
    let pca = std::fs::read_to_string(out.join("pca_points.csv")).unwrap();
    assert!(pca.contains("SOURCE") && pca.contains("TARGET"));

    let o = adens(&["diagnose", p(&tmp.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_round_trips_through_json() {
    let cfg: RunConfig = serde_json::from_value(run_config("ae", "multilabel")).unwrap();
    let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(adens(&["frobnicate"]).status.code(), Some(2));
}
