//! End-to-end harness behavior: config files, artifact schemas, manifests,
//! scheduling independence and the command-line interface.

use std::process::Command;

use bpdl_core::harness::{self, presets, ExperimentConfig};

fn small_meanfield_cfg() -> ExperimentConfig {
    let mut cfg = presets::meanfield_validation();
    cfg.replicas = 0;
    cfg
}

#[test]
fn run_writes_expected_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_meanfield_cfg();
    cfg.output = Some(dir.path().to_path_buf());
    let outcome = harness::run(&cfg).unwrap();
    assert!(outcome.report.all_pass());
    for name in ["meanfield_snapshots.csv", "report.json", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    // Snapshot schema: time, mass, then one column per observable.
    let csv = std::fs::read_to_string(dir.path().join("meanfield_snapshots.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("time,mass,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config_hash"], cfg.canonical_hash().as_str());
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v == "report.json"));
}

#[test]
fn reports_are_identical_across_thread_counts() {
    // Replica aggregation happens in index order, so worker scheduling must
    // not leak into any statistic.
    let mut base = presets::lln_convergence();
    base.replicas = 12;
    base.scales = vec![50, 100];
    base.horizon = 2.0;
    let mut single = base.clone();
    single.threads = Some(1);
    let mut multi = base.clone();
    multi.threads = Some(4);
    let a = harness::run(&single).unwrap().report.to_json();
    let b = harness::run(&multi).unwrap().report.to_json();
    assert_eq!(a, b);
}

#[test]
fn zero_replicas_still_produces_limit_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_meanfield_cfg();
    cfg.output = Some(dir.path().to_path_buf());
    cfg.replicas = 0;
    let outcome = harness::run(&cfg).unwrap();
    assert!(outcome.report.all_pass());
    assert!(dir.path().join("meanfield_snapshots.csv").exists());
}

#[test]
fn example_config_documents_parse() {
    for name in ["lln_convergence.toml", "clt_covariance.toml"] {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/");
        let doc = std::fs::read_to_string(format!("{path}{name}")).unwrap();
        let cfg = ExperimentConfig::from_toml_str(&doc).unwrap();
        cfg.validate().unwrap();
    }
}

#[test]
fn cli_runs_and_exits_by_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bpdl"))
        .args([
            "meanfield-validation",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "exit {:?}, stdout:\n{stdout}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("[PASS] mf_weak_form_residual"));
    assert!(dir.path().join("report.json").exists());

    // An impossible tolerance override must flip the exit code.
    let cfg_doc = {
        let mut cfg = small_meanfield_cfg();
        cfg.tolerances.insert("weak_form_residual".into(), -1.0);
        toml::to_string(&cfg).unwrap()
    };
    let cfg_path = dir.path().join("fail.toml");
    std::fs::write(&cfg_path, cfg_doc).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bpdl"))
        .args([
            "meanfield-validation",
            "--config",
            cfg_path.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(!out.status.success(), "impossible tolerance must fail");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_seed_override_changes_streams() {
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_bpdl"))
            .args(["martingale-check", "--replicas", "8", "--seed", seed])
            .env("BPDL_THREADS", "2")
            .output()
            .expect("binary runs");
        String::from_utf8_lossy(&out.stdout).to_string()
    };
    let a = run("7");
    let b = run("7");
    let c = run("8");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
