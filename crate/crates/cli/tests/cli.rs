use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixgop_core::features::{write_feature_set, Split};
use mixgop_core::synth::{planted_ood, PlantedOodConfig};
use mixgop_core::{FeatureSet, InventoryEntry, PhonemeInventory, SegmentRecord};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixgop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixgop"))
        .args(args)
        .env_remove("MIXGOP_WORKERS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn synthetic(dir: &Path, n_phonemes: usize) -> PathBuf {
    let path = dir.join("features.json");
    let cfg = PlantedOodConfig {
        n_phonemes,
        feature_dim: 4,
        train_per_phoneme: 60,
        test_utterances: 16,
        segments_per_utterance: 10,
        seed: 5,
        ..Default::default()
    };
    write_feature_set(&planted_ood(&cfg).unwrap(), &path).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

fn artifact_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && n != "index.json")
        .collect();
    names.sort();
    names
}

#[test]
fn mixgop_writes_one_model_per_phoneme() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 2);
    let out = dir.path().join("out");
    let o = mixgop(&["train", "--manifest", s(&manifest), "--components", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(artifact_files(&out.join("models/gmm")).len(), 2);
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("training_log.json")).unwrap()).unwrap();
    assert_eq!(log["entries"].as_array().unwrap().len(), 2);
    assert_eq!(log["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn knn_writes_indexes_without_a_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 3);
    let out = dir.path().join("out");
    let o = mixgop(&["train", "--manifest", s(&manifest), "--method", "knn", "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(artifact_files(&out.join("models/knn")).len(), 3);
    assert!(!out.join("training_log.json").exists());
}

#[test]
fn missing_artifacts_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 2);
    let o = mixgop(&["evaluate", "--manifest", s(&manifest), "--out", s(&dir.path().join("none"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = error_json(&o);
    assert_eq!(err["error"], "MissingModel");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 2);
    let o = mixgop(&["train", "--manifest", s(&manifest), "--method", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "UsageError");

    let o = mixgop(&["train", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));

    let o = mixgop(&["train", "--manifest", s(&manifest), "--layer-index", "7", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "layer mismatch is a usage error");

    let o = Command::new(env!("CARGO_BIN_EXE_mixgop"))
        .args(["validate-manifest", s(&manifest)])
        .env("MIXGOP_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));

    let o = mixgop(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn corrupt_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 2);
    let blob = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "bin"))
        .unwrap();
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&blob, bytes).unwrap();
    let o = mixgop(&["validate-manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "ChecksumMismatch");
}

#[test]
fn evaluate_reports_planted_signal() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("gen/features.json");
    let o = mixgop(&[
        "generate-synthetic", "--out", s(&manifest), "--phonemes", "4", "--dim", "8", "--train-per-phoneme", "150",
        "--test-utterances", "30", "--segments", "20", "--seed", "2",
    ]);
    assert!(o.status.success());
    let out = dir.path().join("out");
    for cmd in ["train", "evaluate"] {
        let o = mixgop(&[cmd, "--manifest", s(&manifest), "--components", "3", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = read_csv(&out.join("report.csv"));
    assert_eq!(rows.len(), 1);
    let tau: f64 = rows[0]["kendall_tau"].parse().unwrap();
    assert!(tau < -0.8, "tau {tau}");
    assert_eq!(rows[0]["method"], "mixgop");
    assert_eq!(rows[0]["comparable"], "true");

    let o = mixgop(&["evaluate", "--manifest", s(&manifest), "--method", "mixgop_attn", "--level", "segment", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 2);
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        serde_json::json!({ "manifest": manifest, "method": "knn", "subsample_cap": 10 }).to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mixgop(&["train", "--config", s(&config), "--method", "mixgop", "--components", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("models/gmm/index.json").exists());
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("training_log.json")).unwrap()).unwrap();
    assert_eq!(log["subsample_cap"], 10);
    assert_eq!(log["entries"][0]["n_train"], 10);

    let o = mixgop(&["train", "--config", s(&dir.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablation_grid_marks_infeasible_points() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 2);
    let out = dir.path().join("out");
    let o = mixgop(&[
        "ablate", "--manifest", s(&manifest), "--caps", "8,full", "--grid-components", "2,16", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 4);
    let key: Vec<(&str, &str, &str)> =
        rows.iter().map(|r| (r["cap"].as_str(), r["components"].as_str(), r["status"].as_str())).collect();
    assert_eq!(key, vec![("8", "2", "ok"), ("8", "16", "skipped"), ("full", "2", "ok"), ("full", "16", "ok")]);
    assert!(rows[1]["reason"].contains("16 components"));
    assert!(rows[1]["kendall_tau"].is_empty());
}

/// One phoneme whose rows sit in two environments. With `aligned`, the
/// features separate by environment; otherwise they are noise.
fn environment_fixture(dir: &Path, aligned: bool, n: usize) -> PathBuf {
    let inventory = PhonemeInventory::new(vec![
        InventoryEntry { symbol: "AA".into(), natural_class: "vowel".into() },
        InventoryEntry { symbol: "P".into(), natural_class: "stop".into() },
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let envs: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let x = Array2::from_shape_fn((n, 3), |(i, _)| {
        let noise = rng.gen_range(-1.0f32..1.0);
        if aligned {
            noise + if envs[i] { 50.0 } else { -50.0 }
        } else {
            noise
        }
    });
    let records = (0..n)
        .map(|i| SegmentRecord {
            row_index: i,
            utterance_id: format!("u{}", i / 10),
            speaker_id: "s".into(),
            phoneme: "AA".into(),
            prev_phoneme: if envs[i] { "P".into() } else { "#".into() },
            next_phoneme: "#".into(),
            split: Split::Train,
            utterance_score: None,
            segment_label: None,
        })
        .collect();
    let fs = FeatureSet::new(x, records, inventory, "fixture", 3).unwrap();
    let path = dir.join(format!("env-{aligned}.json"));
    write_feature_set(&fs, &path).unwrap();
    path
}

fn pooled_anmi(manifest: &Path, out: &Path) -> f64 {
    let config = out.with_extension("config.json");
    std::fs::write(&config, r#"{"anmi": {"n_clusters": 2}}"#).unwrap();
    let o = mixgop(&["analyze", "--config", s(&config), "--manifest", s(manifest), "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("anmi.csv"));
    let pooled = rows.iter().find(|r| r["scope"] == "pooled").unwrap();
    assert!(!out.join("attention_weights.csv").exists());
    pooled["anmi"].parse().unwrap()
}

#[test]
fn anmi_limits_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let aligned = environment_fixture(dir.path(), true, 400);
    assert_eq!(pooled_anmi(&aligned, &dir.path().join("a")), 1.0);
    let noise = environment_fixture(dir.path(), false, 4000);
    let v = pooled_anmi(&noise, &dir.path().join("b"));
    assert!(v < 0.01, "independent ANMI {v}");
}

#[test]
fn analyze_emits_attention_tables() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 3);
    let out = dir.path().join("out");
    let o = mixgop(&[
        "analyze", "--manifest", s(&manifest), "--components", "2", "--soft-rank-eps", "1,0.1", "--folds", "4", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let weights = read_csv(&out.join("attention_weights.csv"));
    assert_eq!(weights.len(), 6);
    for eps in ["1.0", "0.1"] {
        let total: f64 = weights.iter().filter(|r| r["soft_rank_eps"] == eps).map(|r| r["weight"].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    assert_eq!(read_csv(&out.join("attention_folds.csv")).len(), 8);
    let layers = read_csv(&out.join("anmi_layers.csv"));
    assert!(!layers[0]["mixgop_tau"].is_empty());
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 3);
    let mut trees = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        for cmd in ["train", "score", "evaluate"] {
            let o = mixgop(&[cmd, "--manifest", s(&manifest), "--components", "2", "--seed", "9", "--out", s(&out)]);
            assert!(o.status.success());
        }
        trees.push(tree(&out));
    }
    assert!(trees[0].len() >= 8);
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn ablation_signal_does_not_degrade_with_more_data() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("features.json");
    let cfg = PlantedOodConfig {
        n_phonemes: 4,
        feature_dim: 8,
        train_per_phoneme: 400,
        test_utterances: 40,
        segments_per_utterance: 20,
        seed: 12,
        ..Default::default()
    };
    write_feature_set(&planted_ood(&cfg).unwrap(), &manifest).unwrap();
    let out = dir.path().join("out");
    let o = mixgop(&[
        "ablate", "--manifest", s(&manifest), "--caps", "16,64,256,full", "--grid-components", "2", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let taus: Vec<f64> = read_csv(&out.join("ablation.csv"))
        .iter()
        .map(|r| r["abs_kendall_tau"].parse().unwrap())
        .collect();
    assert_eq!(taus.len(), 4);
    for w in taus.windows(2) {
        assert!(w[1] >= w[0] - 0.05, "{taus:?}");
    }
}
