use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use strokeforge::dataset::read_jsonl;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_strokeforge"));
    c.env_remove("STROKEFORGE_DATA_DIR");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().unwrap()
}

/// Tiny models so the whole pipeline runs in seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{
  "seed": 5, "s_max": 120,
  "train_size": 40, "test_size": 10, "validation_size": 10,
  "components": 2, "latent": 4, "enc_hidden": 8, "dec_hidden": 16,
  "baseline_batch": 4, "baseline_steps": 6,
  "refiner_depths": [3, 4, 4, 4, 4, 4], "refiner_dense": [8, 8], "refiner_image_size": 16,
  "refiner_batch": 2, "refiner_steps": 4,
  "disc_kernels": [4, 4, 4, 4, 4, 4], "disc_dense": [8, 8], "disc_image_size": 16,
  "disc_batch": 8, "disc_epochs": 2, "disc_train_per_class": 12, "disc_validation_per_class": 4,
  "tsne_perplexity": 5, "tsne_iterations": 300
}"#,
    )
    .unwrap();
    path
}

/// A temp dir holding 60 synthetic cats ingested into `store/`.
fn prepared() -> (TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap().to_string();
    ok(dir.path(), &["synth", "--count", "60", "--out", "cats.ndjson", "--seed", "2"]);
    ok(dir.path(), &["ingest", "cats.ndjson", "--out", "store", "--config", &cfg]);
    (dir, cfg)
}

#[test]
fn ingest_reports_and_fails_on_empty_input() {
    let (dir, cfg) = prepared();
    let d = dir.path();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("store/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["splits"]["train"], 40);
    assert_eq!(manifest["parsed"], 60);

    let mut text = fs::read_to_string(d.join("cats.ndjson")).unwrap();
    text.push_str("{\"drawing\": oops\n");
    fs::write(d.join("corrupt.ndjson"), text).unwrap();
    let out = run(d, &["ingest", "corrupt.ndjson", "--out", "store2", "--config", &cfg]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 malformed"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("store2/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["malformed_lines"], 1);

    fs::write(d.join("empty.ndjson"), "").unwrap();
    assert_eq!(code(d, &["ingest", "empty.ndjson", "--out", "store3"]), 2);
    assert_eq!(code(d, &["ingest", "absent.ndjson", "--out", "store3"]), 2);
    fs::write(d.join("bad.json"), "{\"sead\": 1}").unwrap();
    assert_eq!(code(d, &["ingest", "cats.ndjson", "--out", "store3", "--config", "bad.json"]), 2);
}

#[test]
fn data_dir_comes_from_the_environment() {
    let (dir, cfg) = prepared();
    let out = bin()
        .current_dir(dir.path())
        .env("STROKEFORGE_DATA_DIR", dir.path().join("store"))
        .args(["train", "baseline", "--out", "b.ckpt", "--steps", "1", "--config", &cfg])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn training_is_reproducible_and_sampling_exports() {
    let (dir, cfg) = prepared();
    let d = dir.path();
    ok(d, &["train", "baseline", "--data", "store", "--out", "b1.ckpt", "--config", &cfg]);
    ok(d, &["train", "baseline", "--data", "store", "--out", "b2.ckpt", "--config", &cfg]);
    let log = fs::read_to_string(d.join("b1.csv")).unwrap();
    assert_eq!(log, fs::read_to_string(d.join("b2.csv")).unwrap());
    assert!(log.starts_with("step,L_S,L_P,L_KL,total\n"));
    assert_eq!(log.lines().count(), 7);
    assert_eq!(fs::read(d.join("b1.ckpt")).unwrap(), fs::read(d.join("b2.ckpt")).unwrap());

    ok(d, &["train", "refiner", "--baseline", "b1.ckpt", "--data", "store", "--out", "r.ckpt", "--config", &cfg]);
    let log = fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    ok(d, &["sample", "--baseline", "b1.ckpt", "--count", "5", "--svg-dir", "plain", "--config", &cfg]);
    ok(
        d,
        &["sample", "--baseline", "b1.ckpt", "--refiner", "r.ckpt", "--alpha", "1", "--count", "5", "--svg-dir", "a1", "--config", &cfg],
    );
    ok(
        d,
        &[
            "sample", "--baseline", "b1.ckpt", "--refiner", "r.ckpt", "--alpha", "0.5", "--count", "5", "--svg-dir", "mixed",
            "--png-dir", "png", "--config", &cfg,
        ],
    );
    let plain = read_jsonl(&d.join("plain/sketches.jsonl")).unwrap();
    assert_eq!(plain.len(), 5);
    assert_eq!(plain, read_jsonl(&d.join("a1/sketches.jsonl")).unwrap());
    assert_ne!(plain, read_jsonl(&d.join("mixed/sketches.jsonl")).unwrap());
    for name in ["grid.svg", "sample-0.svg", "sample-4.svg"] {
        let text = fs::read_to_string(d.join("mixed").join(name)).unwrap();
        roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(d.join("png/sample-4.png").exists());

    // a different seed gives different sketches
    ok(d, &["sample", "--baseline", "b1.ckpt", "--count", "5", "--svg-dir", "other", "--config", &cfg, "--seed", "99"]);
    assert_ne!(plain, read_jsonl(&d.join("other/sketches.jsonl")).unwrap());
}

#[test]
fn user_errors_exit_with_two() {
    let (dir, cfg) = prepared();
    let d = dir.path();
    let out = run(d, &["train", "refiner", "--baseline", "nope.ckpt", "--data", "store", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
    assert_eq!(code(d, &["train", "baseline", "--data", "no-store", "--config", &cfg]), 2);
    assert_eq!(code(d, &["eval", "discriminator", "--checkpoint", "missing.ckpt", "--human", "store/test.jsonl", "--out-dir", "ev"]), 2);
    assert_eq!(code(d, &["sample", "--baseline", "missing.ckpt", "--svg-dir", "s"]), 2);
    assert_eq!(code(d, &["config", "nonsense"]), 2);
    // clap usage errors also exit with 2
    assert_eq!(code(d, &["train", "refiner", "--data", "store"]), 2);

    ok(d, &["train", "baseline", "--data", "store", "--out", "b.ckpt", "--steps", "1", "--config", &cfg]);
    assert_eq!(code(d, &["sample", "--baseline", "b.ckpt", "--alpha", "0.5", "--svg-dir", "s", "--config", &cfg]), 2);
    // a baseline checkpoint is not a refiner
    assert_eq!(code(d, &["sample", "--baseline", "b.ckpt", "--refiner", "b.ckpt", "--svg-dir", "s", "--config", &cfg]), 2);
}

#[test]
fn discriminator_train_and_eval() {
    let (dir, cfg) = prepared();
    let d = dir.path();
    let out = ok(d, &["train", "discriminator", "--synthetic", "--out", "d.ckpt", "--config", &cfg]);
    assert!(out.contains("overall validation accuracy"));
    let log = fs::read_to_string(d.join("d.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,mean_loss,val_accuracy"));
    assert_eq!(log.lines().count(), 3);

    ok(
        d,
        &[
            "eval", "discriminator", "--checkpoint", "d.ckpt", "--human", "store/train.jsonl", "--refined", "store/test.jsonl",
            "--out-dir", "ev",
        ],
    );
    let csv = fs::read_to_string(d.join("ev/confusion.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[1].is_empty() {
            assert_eq!(cells[4], "0");
            continue;
        }
        let sum: f64 = cells[1..4].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 100.0).abs() <= 0.1, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 2);
    assert!(fs::read_to_string(d.join("ev/predictions.csv")).unwrap().lines().count() == 51);

    // a corpus with too few sketches per class is a user error
    assert_eq!(code(d, &["train", "discriminator", "--human", "store/test.jsonl", "--config", &cfg]), 2);
}

#[test]
fn tsne_embeds_named_sets() {
    let (dir, cfg) = prepared();
    let d = dir.path();
    ok(d, &["synth", "--count", "30", "--out", "more.ndjson", "--seed", "8"]);
    let out = ok(
        d,
        &["eval", "tsne", "--set", "train=store/train.jsonl", "--set", "test=store/test.jsonl", "--out-dir", "ts", "--config", &cfg],
    );
    assert!(out.contains("final KL"));
    let spread: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ts/concentration.json")).unwrap()).unwrap();
    assert_eq!(spread[0]["label"], "train");
    assert_eq!(spread[0]["count"], 40);
    assert_eq!(spread[1]["count"], 10);
    let emb: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ts/embedding.json")).unwrap()).unwrap();
    assert_eq!(emb["points"].as_array().unwrap().len(), 50);
    roxmltree::Document::parse(&fs::read_to_string(d.join("ts/scatter.svg")).unwrap()).unwrap();

    let again = ok(
        d,
        &["eval", "tsne", "--set", "train=store/train.jsonl", "--set", "test=store/test.jsonl", "--out-dir", "ts2", "--config", &cfg],
    );
    assert_eq!(out, again);
    assert_eq!(fs::read(d.join("ts/embedding.json")).unwrap(), fs::read(d.join("ts2/embedding.json")).unwrap());

    assert_eq!(code(d, &["eval", "tsne", "--set", "bad", "--out-dir", "ts3"]), 2);
    assert_eq!(code(d, &["eval", "tsne", "--set", "a=store/test.jsonl", "--features", "discriminator", "--out-dir", "ts3"]), 2);
}

/// Two sets of 1,000 sketches with flattened 128×128 raster features.
#[test]
fn tsne_handles_two_thousand_sketches() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--count", "1000", "--out", "a.ndjson", "--seed", "1"]);
    ok(d, &["synth", "--count", "1000", "--out", "b.ndjson", "--seed", "2"]);
    fs::write(d.join("c.json"), r#"{"train_size": 1000, "test_size": 0, "validation_size": 0}"#).unwrap();
    ok(d, &["ingest", "a.ndjson", "--out", "a", "--config", "c.json"]);
    ok(d, &["ingest", "b.ndjson", "--out", "b", "--config", "c.json"]);
    ok(d, &["eval", "tsne", "--set", "a=a/train.jsonl", "--set", "b=b/train.jsonl", "--out-dir", "ts"]);
    let spread: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ts/concentration.json")).unwrap()).unwrap();
    assert_eq!(spread[0]["count"], 1000);
    assert_eq!(spread[1]["count"], 1000);
}

#[test]
fn config_prints_presets() {
    let dir = tempfile::tempdir().unwrap();
    let full: serde_json::Value = serde_json::from_str(&ok(dir.path(), &["config", "full"])).unwrap();
    assert_eq!(full["train_size"], 70000);
    assert_eq!(full["components"], 20);
    let desk: serde_json::Value = serde_json::from_str(&ok(dir.path(), &["config"])).unwrap();
    assert_eq!(desk["s_max"], 250);
}
