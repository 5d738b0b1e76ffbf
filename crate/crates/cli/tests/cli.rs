use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ccag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccag")).args(args).env("CCAG_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// A small toy corpus preprocessed into `dir/data`.
fn toy_dataset(dir: &Path, programs: &str) -> PathBuf {
    let corpus = dir.join("toy.jsonl");
    assert!(ccag(&["synth", "--out", s(&corpus), "--programs", programs]).status.success());
    let data = dir.join("data");
    let out = ccag(&["preprocess", "--input", s(&corpus), "--out", s(&data), "--k", "300"]);
    assert!(out.status.success(), "{}", stderr(&out));
    data
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ccag(&["preprocess", "--bogus"]).status.code(), Some(2));
    assert_eq!(ccag(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ccag(&[]).status.code(), Some(2));
    assert_eq!(ccag(&["--help"]).status.code(), Some(0));
}

#[test]
fn preprocess_reports_statistics_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("toy.jsonl");
    assert!(ccag(&["synth", "--out", s(&corpus), "--programs", "40"]).status.success());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = ccag(&["preprocess", "--input", s(&corpus), "--out", s(&out_dir), "--k", "10"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(stats["files"], 40);
        assert!(stats["value_vocab_size"].as_u64().unwrap() <= 12);
        outputs.push(out_dir);
    }
    for file in ["vocab.json", "segments.jsonl"] {
        assert_eq!(
            std::fs::read(outputs[0].join(file)).unwrap(),
            std::fs::read(outputs[1].join(file)).unwrap()
        );
    }
}

#[test]
fn preprocess_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = ccag(&["preprocess", "--input", "/nonexistent/x.jsonl", "--out", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));

    let tree = std::fs::read_to_string(fixture("def_foo.jsonl")).unwrap();
    let mut lines: Vec<String> = vec![tree.trim().to_string(); 20];
    lines[16] = "[{\"type\": \"Module\", \"children\": [".to_string();
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(&corpus, lines.join("\n")).unwrap();
    let out = ccag(&["preprocess", "--input", s(&corpus), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 17"), "{}", stderr(&out));
}

#[test]
fn train_eval_complete_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), "12");
    let ckpt = dir.path().join("init.ckpt");
    let out = ccag(&["train", "--data", s(&data), "--out", s(&ckpt), "--epochs", "0", "--d", "16"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(ckpt.exists() && dir.path().join("init.ckpt.json").exists());

    let out = ccag(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["positions"], 12 * 49);

    let prefix = fixture("def_foo_prefix.json");
    let other = toy_dataset(&dir.path().join("other"), "5");
    let out = ccag(&["eval", "--checkpoint", s(&ckpt), "--data", s(&other)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("vocabulary"), "{}", stderr(&out));

    // the fixture uses node types the toy corpus never has
    let out = ccag(&["complete", "--checkpoint", s(&ckpt), "--ast-prefix", s(&prefix)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown node type"), "{}", stderr(&out));

    let toy_prefix = dir.path().join("prefix.json");
    std::fs::write(
        &toy_prefix,
        r#"[{"type":"Module"},{"type":"FunctionDef","parent":0},{"type":"identifier","value":"f1","parent":1}]"#,
    )
    .unwrap();
    for k in ["1", "3"] {
        let out = ccag(&["complete", "--checkpoint", s(&ckpt), "--ast-prefix", s(&toy_prefix), "--top-k", k, "--json"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        let n: usize = k.parse().unwrap();
        assert_eq!(r["values"].as_array().unwrap().len(), n);
        assert_eq!(r["types"].as_array().unwrap().len(), n);
        let p: Vec<f64> = r["values"].as_array().unwrap().iter().map(|v| v["probability"].as_f64().unwrap()).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]) && p.iter().sum::<f64>() <= 1.0 + 1e-12);
    }
    let out = ccag(&["complete", "--checkpoint", s(&ckpt), "--ast-prefix", s(&toy_prefix)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("values:\n") && text.contains("types:\n"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), "6");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "dtype = \"f64\"\n[model]\nd = 8\nnum_heads = 2\n[train]\nepochs = 1\nseed = 4\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let metrics = dir.path().join("m.jsonl");
    let out = ccag(&[
        "train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt),
        "--metrics", s(&metrics), "--epochs", "2", "--variant", "pe",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.ckpt.json")).unwrap()).unwrap();
    assert_eq!(sidecar["dtype"], "f64");
    assert_eq!(sidecar["epoch"], 2);
    assert_eq!(sidecar["seed"], 4);
    assert_eq!(sidecar["config"]["d"], 8);
    assert_eq!(sidecar["config"]["use_positions"], false);
    let epochs = std::fs::read_to_string(&metrics)
        .unwrap()
        .lines()
        .filter(|l| serde_json::from_str::<Value>(l).unwrap()["kind"] == "epoch")
        .count();
    assert_eq!(epochs, 2);

    std::fs::write(&config, "[model]\nwidth = 8\n").unwrap();
    let out = ccag(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_runs_exactly_the_requested_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), "4");
    let csv = dir.path().join("t.csv");
    let out = ccag(&[
        "ablate", "--data", s(&data), "--variants", "ng,gs", "--epochs", "1", "--d", "8",
        "--heads", "2", "--csv", s(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows: Vec<String> = std::fs::read_to_string(&csv).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("CCAG-NG,") && rows[1].starts_with("CCAG-GS,"));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("CCAG-NG") && table.contains("CCAG-GS") && !table.contains("CCAG-PE"));

    let out = ccag(&["ablate", "--data", s(&data), "--variants", "ng,zz", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
