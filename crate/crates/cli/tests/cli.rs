use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
    "kind": "train",
    "dataset": { "generator": "gaussian-mixture", "k": 4, "p": 5, "n": 200 },
    "model": { "hidden": [8] },
    "optimizer": { "method": "msam", "lr": 0.1, "rho": 0.05, "m": 4 },
    "epochs": 2,
    "batch_size": 16,
    "seeds": [0],
    "sharpness": { "max_iters": 30 }
}"#;

fn msam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msam")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn train_writes_report_for_requested_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "tiny.json", TINY);
    let out_dir = dir.path().join("out");
    let out = msam(&[
        "train",
        "--config",
        &config,
        "--seed",
        "3,4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let csv = std::fs::read_to_string(out_dir.join("train.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(msam_core::harness::CSV_HEADER));
    let seeds: Vec<&str> = lines.map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(seeds.len(), 2 * 2 * (160 / 16));
    assert!(seeds.iter().all(|s| *s == "3" || *s == "4"));
    assert!(seeds.contains(&"3") && seeds.contains(&"4"));
}

#[test]
fn json_format_is_readable_back() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "tiny.json", TINY);
    let out_dir = dir.path().join("json");
    let out = msam(&[
        "train",
        "--config",
        &config,
        "--format",
        "json",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = msam_core::harness::read_json_report(out_dir.join("train.json")).unwrap();
    assert_eq!(rows.len(), 2 * (160 / 16));
    assert_eq!(rows.iter().filter(|r| r.lambda_max.is_some()).count(), 1);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(
        dir.path(),
        "unknown.json",
        r#"{"kind": "train", "optimizer": {"rho_per_shard": 1}}"#,
    );
    let out = msam(&["train", "--config", &unknown]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optimizer"), "{}", stderr(&out));

    let uneven = write_config(
        dir.path(),
        "uneven.json",
        r#"{"kind": "train", "optimizer": {"method": "msam", "m": 5}}"#,
    );
    let out = msam(&["train", "--config", &uneven, "--strict-shards"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optimizer.m"), "{}", stderr(&out));

    let out = msam(&["train", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("\"lr\": 0.1", "\"lr\": 1e300");
    let config = write_config(dir.path(), "diverge.json", &text);
    let out = msam(&["train", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("step"), "{}", stderr(&out));
}

#[test]
fn stability_output_verifies_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = msam(&["stability", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc_path = dir.path().join("stability.json");
    assert!(dir.path().join("stability_ordering.json").exists());

    let ok = msam(&["verify-stability", doc_path.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));

    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&doc_path).unwrap()).unwrap();
    let verdict = &mut doc["reports"][0]["verdict"];
    *verdict = if verdict == "unstable" {
        "stable".into()
    } else {
        "unstable".into()
    };
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_string(&doc).unwrap()).unwrap();
    let bad = msam(&["verify-stability", tampered.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("mismatch"));
}
