use std::path::Path;
use std::process::{Command, Output};

use fedgen::datasets::load_federated;
use fedgen::metrics::metrics_csv_header;

const CONFIG: &str = r#"{
  "seed": 5,
  "dataset": {"synthetic": {"num_labels": 3, "feature_dim": 4, "num_clients": 10,
    "examples_per_client": 30, "sigma_class": 1.0, "sigma_client": 1.0,
    "sigma_within": 0.5, "dirichlet_alpha": 1.0}},
  "model": {"kind": "linear"},
  "trainer": {"federated": {"rounds": 6, "clients_per_round": 3,
    "client": {"client_lr": 0.1}, "server": {"kind": "fedavgm", "server_lr": 1.0},
    "eval_every": 2, "percentiles": false}},
  "outputs": {"metrics_csv": "out/metrics.csv", "params_out": "out/params.json"}
}"#;

fn fedgen(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedgen"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), CONFIG).unwrap();
    dir
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = workspace();
    let out = fedgen(
        &["synth", "--config", "config.json", "--out", "data.json"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fd = load_federated(dir.path().join("data.json")).unwrap();
    assert_eq!(fd.num_clients(), 10);
    assert_eq!(fd.num_examples(), 300);
}

#[test]
fn staged_commands_chain() {
    let dir = workspace();
    let steps: [&[&str]; 4] = [
        &["synth", "--config", "config.json", "--out", "data.json"],
        &[
            "split",
            "--config",
            "config.json",
            "--data",
            "data.json",
            "--out",
            "split",
        ],
        &[
            "train",
            "--config",
            "config.json",
            "--split",
            "split",
            "--metrics",
            "m.csv",
            "--params",
            "p.json",
        ],
        &[
            "eval",
            "--config",
            "config.json",
            "--split",
            "split",
            "--params",
            "p.json",
            "--out",
            "e.csv",
        ],
    ];
    for args in steps {
        let out = fedgen(args, dir.path());
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let metrics = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
    let eval = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(eval.lines().count(), 2);
}

#[test]
fn pipeline_writes_declared_outputs() {
    let dir = workspace();
    let out = fedgen(&["pipeline", "--config", "config.json"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), metrics_csv_header(false));
    assert!(dir.path().join("out/params.json").exists());
    assert!(!dir.path().join("out/entropy.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    assert_eq!(fedgen(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(
        fedgen(&["synth", "--config", "config.json"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_1() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("bad.json"),
        CONFIG.replace("\"rounds\": 6", "\"rounds\": 0"),
    )
    .unwrap();
    let out = fedgen(&["pipeline", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rounds"));
    let missing = fedgen(&["pipeline", "--config", "nope.json"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}
