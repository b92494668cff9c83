//! End-to-end CLI checks: exit codes, trace and summary files, byte-level
//! determinism across re-runs, zero-round configs, and sweeps.

use std::path::Path;
use std::process::Command;

fn bco() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bco"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL_STOCHASTIC: &str = r#"{
    "body": {"kind": "ball", "dim": 2},
    "loss": {"kind": "quadratic", "center": [0.3, 0.0], "scale": 50.0},
    "noise": {"kind": "gaussian", "std": 0.1},
    "mode": "stochastic",
    "n": 60,
    "overrides": {"eta": 0.05, "lambda": 0.3, "sigma_sq": 0.05, "epsilon": 0.05, "f_max": 50.0},
    "replicas": 2,
    "seed": 11
}"#;

#[test]
fn run_writes_traces_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", SMALL_STOCHASTIC);
    let out = tmp.path().join("out");

    let status = bco()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    for i in 0..2 {
        let trace = std::fs::read_to_string(out.join(format!("replica_{i}.csv"))).unwrap();
        let mut lines = trace.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,t,Y,pip,m,restart,cum_true_regret,cum_shat_stat"
        );
        assert_eq!(lines.count(), 60);
    }

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replicas"], 2);
    assert_eq!(summary["completed"], 2);
    assert_eq!(summary["n"], 60);
    assert!(summary["final_regret_mean"].as_f64().unwrap().is_finite());
    assert!(summary["constants"]["eta"].as_f64().unwrap() == 0.05);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", SMALL_STOCHASTIC);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let status = bco()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    for i in 0..2 {
        let name = format!("replica_{i}.csv");
        let a = std::fs::read(out_a.join(&name)).unwrap();
        let b = std::fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn cli_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", SMALL_STOCHASTIC);
    let out = tmp.path().join("out");

    let status = bco()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--override", "n=15", "--override", "replicas=1"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let trace = std::fs::read_to_string(out.join("replica_0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 16);
    assert!(!out.join("replica_1.csv").exists());
}

#[test]
fn zero_round_config_yields_empty_traces_and_zero_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "zero.json",
        &SMALL_STOCHASTIC.replace("\"n\": 60", "\"n\": 0"),
    );
    let out = tmp.path().join("out");

    let status = bco()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let trace = std::fs::read_to_string(out.join("replica_0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_regret_mean"], 0.0);
    assert_eq!(summary["restarts_total"], 0);
    assert_eq!(summary["completed"], 2);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();

    let status = bco()
        .args(["run", "--config"])
        .arg(tmp.path().join("missing.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let bad = write_config(tmp.path(), "bad.json", r#"{"body": {"kind": "torus"}}"#);
    let status = bco().args(["run", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let cfg = write_config(tmp.path(), "exp.json", SMALL_STOCHASTIC);
    let status = bco()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--override", "warp=9"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn sweep_tabulates_and_accepts_empty_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "exp.json",
        &SMALL_STOCHASTIC.replace("\"replicas\": 2", "\"replicas\": 1"),
    );

    let out = tmp.path().join("sweep");
    let result = bco()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "n", "--values", "10,20"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "value,mean_regret,regret_over_sqrt_n,restarts");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("10,"));
    assert!(lines[2].starts_with("20,"));

    let out_empty = tmp.path().join("sweep-empty");
    let status = bco()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "n", "--values", ""])
        .arg("--out")
        .arg(&out_empty)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = std::fs::read_to_string(out_empty.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);

    let status = bco()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "warp", "--values", "1,2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn diag_gauge_passes() {
    let result = bco().args(["diag", "gauge"]).output().unwrap();
    assert_eq!(result.status.code(), Some(0));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("[PASS] gauge/ball"));
    assert!(stdout.contains("[PASS] gauge/box"));
}
