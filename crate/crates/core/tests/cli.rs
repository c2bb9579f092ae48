//! The `robust-oag` binary on the shipped configuration files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_robust-oag"))
        .args(args)
        .output()
        .expect("binary starts");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run_config(sub: &str, config: &Path, out: &Path) -> (i32, String) {
    run(&[sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn academic_certify_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_config("certify", &configs().join("academic_poly.json"), dir.path());
    assert_eq!(code, 0, "{err}");
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert!(cert["rho"].as_f64().unwrap() >= 1.0 - 1e-6);
    let m = manifest(dir.path());
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["command"], "certify");
}

#[test]
fn academic_lft_certify_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_config("certify", &configs().join("academic_lft.json"), dir.path());
    assert_eq!(code, 0, "{err}");
}

#[test]
fn corrupted_polytope_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_config("certify", &configs().join("academic_corrupted.json"), dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(!dir.path().join("certificate.json").exists());
    assert_eq!(manifest(dir.path())["exit_code"], 2);
}

#[test]
fn academic_simulate_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_config("simulate", &configs().join("academic_simulate.json"), dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("metrics.json").exists());
    assert!(dir.path().join("trace_oag.csv").exists());
}

#[test]
fn feeder_commands_succeed() {
    for (sub, file, artifact) in [
        ("sample-gamma", "feeder_gamma.json", "gamma.json"),
        ("certify", "feeder_lft.json", "certificate.json"),
        ("simulate", "feeder_simulate.json", "metrics.json"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let (code, err) = run_config(sub, &configs().join(file), dir.path());
        assert_eq!(code, 0, "{sub} {file}: {err}");
        assert!(dir.path().join(artifact).exists(), "{sub} {file}");
    }
}

#[test]
fn json_format_switches_trace_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("academic_simulate.json");
    let (code, err) = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("trace_oag.json").exists());
    assert!(!dir.path().join("trace_oag.csv").exists());
}

#[test]
fn config_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run_config("certify", &dir.path().join("absent.json"), dir.path());
    assert_eq!(code, 64);

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"seed": 1, "plant": {"kind": "academic"}, "bogus": 3}"#).unwrap();
    let (code, _) = run_config("certify", &unknown, &dir.path().join("o1"));
    assert_eq!(code, 64);

    let missing_model = dir.path().join("missing_model.json");
    std::fs::write(
        &missing_model,
        r#"{"seed": 1, "plant": {"kind": "feeder", "model": "nowhere.json"}, "gamma": {"samples": 10}}"#,
    )
    .unwrap();
    let (code, _) = run_config("sample-gamma", &missing_model, &dir.path().join("o2"));
    assert_eq!(code, 64);

    let (code, _) = run(&["certify", "--no-such-flag"]);
    assert_eq!(code, 64);
    let (code, _) = run(&[]);
    assert_eq!(code, 64);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["--version"]).0, 0);
}

#[test]
fn demo_runs_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(&["demo", "academic", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let m = manifest(dir.path());
    let listed = m["artifacts"].as_array().unwrap();
    assert!(!listed.is_empty());
    assert!(dir.path().join("config.json").exists());
}
