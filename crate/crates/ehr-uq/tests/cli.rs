//! Smoke tests for the batch driver binary: happy paths, the config /
//! runtime exit-code split, and the flag overrides.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehr-uq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, out_dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    let text = format!(
        r#"
[run]
out_dir = {out_dir:?}
seed = 3

[cohort]
n_patients = 20
train_size = 10
test_size = 10
embedding_dim = 8
events_min = 5
events_max = 10
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_writes_run_directory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);

    let output = run(&["synth", "--config", config.to_str().unwrap()]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    for file in ["cohort.jsonl", "embeddings.jsonl", "concepts.tsv", "oracle.json", "manifest_synth.json"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);

    let output = run(&["synth", "--config", config.to_str().unwrap(), "--seed", "99"]);
    assert!(output.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest_synth.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn out_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &dir.path().join("ignored"));
    let moved = dir.path().join("moved");

    let output = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        moved.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(moved.join("manifest_synth.json").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        format!("[run]\nout_dir = {:?}\n\n[cohort]\nn_patients = 0\n", dir.path().join("run")),
    )
    .unwrap();

    let output = run(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("n_patients"));
}

#[test]
fn missing_config_flag_exits_2() {
    let output = run(&["synth"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn eval_whitebox_without_artifacts_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &dir.path().join("empty-run"));

    let output = run(&["eval-whitebox", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn report_without_reports_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty-run");
    std::fs::create_dir_all(&empty).unwrap();

    let output = run(&[
        "report",
        "--out",
        dir.path().join("summaries").to_str().unwrap(),
        empty.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}
