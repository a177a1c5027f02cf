use std::path::Path;
use std::process::{Command, Output};

fn bellqmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bellqmc")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"
output_dir = "{}"

[model]
kind = "tfim1d"
L = 6
h = 1.0
boundary = "open"
beta = 4.0

[run]
n_equilibration = 200
n_measurement = 2000
block_size = 100
seed = 5
n_chains = 2

[[observables]]
type = "renyi2"
region = "half"

[[observables]]
type = "pauli_sq"
string = "Z2 Z3"
{extra}
"#,
        dir.join("out").display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut csvs = Vec::new();
    for (out, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let out = dir.path().join(out);
        let o = bellqmc(&["run", &cfg, "--seed", seed, "--threads", "2", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("results.csv")).unwrap());
        assert!(out.join("summary.json").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_ne!(csvs[0], csvs[2]);
}

#[test]
fn ti_writes_node_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[ti]\nregion = \"half\"\nnodes = 4\nmethod = \"subset_b\"\n");
    let o = bellqmc(&["ti", &cfg, "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let nodes = std::fs::read_to_string(dir.path().join("out/ti_nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count(), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/ti_summary.json")).unwrap()).unwrap();
    assert!(summary["s2_e1"].is_object());
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("block_size = 100", "block_size = 0");
    std::fs::write(&cfg, text).unwrap();
    let o = bellqmc(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.block_size"));
}

#[test]
fn oracle_reports_classical_ground_energy() {
    let o = bellqmc(&["oracle", "--model", "tfim", "--L", "4", "--h", "0", "--beta", "8", "--region", "half"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((doc["ground_energy"].as_f64().unwrap() + 3.0).abs() < 1e-9);
    assert!(doc["s2_thermal"].as_f64().is_some());
}

#[test]
fn self_check_passes() {
    let o = bellqmc(&["check"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 6);
}
