use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn frb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frb")).args(args).env_remove("FRB_SEED").output().expect("frb runs")
}

fn frb_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frb")).args(args).env(key, val).output().expect("frb runs")
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn rows(csv: &[u8]) -> Vec<(String, usize, f64, f64)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv);
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn bundled_xeb_config_reaches_the_plateau() {
    let cfg = example("xeb_n2.json");
    let out = frb(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(text.starts_with("# frb "));
    assert!(text.lines().nth(1).unwrap().starts_with("# config_hash "));
    assert!(text.contains("lambda,m,n_shots,estimate,stderr"));
    for (lambda, _, est, se) in rows(&out.stdout) {
        assert_eq!(lambda, "ad");
        assert!((est - 0.75).abs() < 4.0 * se, "{est} ± {se}");
    }
}

#[test]
fn zero_shots_is_a_config_error() {
    let cfg = example("xeb_n2.json");
    let out = frb(&["simulate", "--config", cfg.to_str().unwrap(), "--shots", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"ensemble": {"arch": "lrc", "n": "two"}, "ms": [1], "shots": 10}"#).unwrap();
    let out = frb(&["simulate", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ensemble.n"));
    std::fs::write(&p, r#"{"ensemble": {"arch": "lrc", "n": 2}, "ms": [1], "shots": 10, "extra": 1}"#).unwrap();
    let out = frb(&["simulate", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulation_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("xeb_n2.json");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3", "1"].iter().enumerate() {
        let csv = dir.path().join(format!("{i}.csv"));
        let jsonl = dir.path().join(format!("{i}.jsonl"));
        let out = frb(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--shots",
            "500",
            "--threads",
            threads,
            "--out",
            csv.to_str().unwrap(),
            "--jsonl",
            jsonl.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(csv).unwrap(), std::fs::read(jsonl).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let jsonl = String::from_utf8(outputs[0].1.clone()).unwrap();
    let header: Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(csv.contains(header["config_hash"].as_str().unwrap()));
    assert_eq!(jsonl.lines().count(), 1 + 5 * 500);
}

#[test]
fn seed_environment_variable_overrides_the_file() {
    let cfg = example("xeb_n2.json");
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--shots", "200"];
    let a = frb(&args);
    let b = frb_env(&args, "FRB_SEED", "7");
    let c = frb_env(&args, "FRB_SEED", "7");
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
    assert_eq!(b.stdout, c.stdout);
    assert_eq!(frb_env(&args, "FRB_SEED", "seven").status.code(), Some(2));
}

#[test]
fn gap_of_the_three_qubit_chain() {
    let v = json(&frb(&["gap", "--arch", "nn-lrc", "--n", "3", "--t", "2"]));
    assert!((v["gap"].as_f64().unwrap() - 0.3).abs() < 1e-10);
    assert!((v["closed_form"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn tabulated_brickwork_gap() {
    let v = json(&frb(&["gap", "--arch", "BW", "--n", "10", "--table"]));
    assert!((v["gap"].as_f64().unwrap() - 9.0 / 50.0).abs() < 1e-15);
}

#[test]
fn oversized_dense_gap_is_a_capacity_error() {
    let out = frb(&["gap", "--arch", "lrc", "--n", "3", "--t", "3"]);
    assert_eq!(out.status.code(), Some(3));
    let v = json(&frb(&["gap", "--arch", "lrc", "--n", "3", "--t", "3", "--matrix-free"]));
    assert!((v["gap"].as_f64().unwrap() - 0.3).abs() < 1e-8);
}

#[test]
fn alpha_free_brickwork_sequence_length() {
    let v = json(&frb(&["bounds", "--arch", "bw-odd", "--n", "10"]));
    let value = v["design"]["value"].as_f64().unwrap();
    assert!((97.0..=98.0).contains(&value), "{value}");
    assert!(v["design"]["alpha_free"].as_bool().unwrap());
}

#[test]
fn bounds_report_intermediates() {
    let v = json(&frb(&[
        "bounds",
        "--gap",
        "1",
        "--n",
        "2",
        "--form",
        "lemma",
        "--alpha",
        "0.01",
        "--implementation-error",
        "0.01",
    ]));
    let lemma = &v["lemma"];
    for key in ["c_lambda", "overlap", "delta", "gap", "g", "exact", "linearized", "m"] {
        assert!(lemma.get(key).is_some(), "missing {key}");
    }
    let v = json(&frb(&[
        "bounds",
        "--gap",
        "1",
        "--form",
        "additive",
        "--d-lambda",
        "3",
        "--overlap",
        "0.75",
        "--alpha",
        "0.01",
        "--second-moment",
        "3",
        "--eps",
        "0.1",
    ]));
    assert_eq!(v["simplified"]["m"], 15);
    assert!(v["sampling"]["n"].as_u64().unwrap() > 6000);
    let v = json(&frb(&["bounds", "--table"]));
    assert_eq!(v["table"].as_array().unwrap().len(), 6);
}

#[test]
fn single_qubit_clifford_second_moment() {
    let v = json(&frb(&["moments", "--group", "clifford", "--n", "1", "--irrep", "ad", "--blocks"]));
    assert!((v["ideal"].as_f64().unwrap() - 0.75).abs() < 1e-15);
    assert!((v["blocks"]["total"].as_f64().unwrap() - 0.75).abs() < 1e-10);
}

#[test]
fn fit_of_the_packaged_synthetic_series() {
    let csv = example("synthetic_r097.csv");
    let a = frb(&["fit", "--csv", csv.to_str().unwrap()]);
    let v = json(&a);
    assert!((v["r"].as_f64().unwrap() - 0.97).abs() < 1e-3);
    assert!((v["A"].as_f64().unwrap() - 0.75).abs() < 1e-2);
    assert_eq!(v["lambda"], "ad");
    assert_eq!(v["m_window"], serde_json::json!([1, 64]));
    assert!(v["stderr_r"].as_f64().unwrap() > 0.0);
    assert_eq!(a.stdout, frb(&["fit", "--csv", csv.to_str().unwrap()]).stdout);
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("noisy.json");
    std::fs::write(
        &cfg,
        r#"{"ensemble": {"arch": "exact", "n": 2, "group": "clifford"},
            "noise": {"type": "depolarizing", "f": 0.95},
            "ms": [1, 3, 6, 10, 15, 20], "shots": 4000, "seed": 5}"#,
    )
    .unwrap();
    let csv = dir.path().join("est.csv");
    let out = frb(&["simulate", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&frb(&["fit", "--csv", csv.to_str().unwrap()]));
    assert!((v["r"].as_f64().unwrap() - 0.95).abs() < 0.01, "{v}");
}

#[test]
fn perturbation_checks() {
    let v = json(&frb(&["perturb-check", "--instances", "40", "--seed", "3"]));
    assert_eq!(v["all_hold"], true);
    assert!(v["max_reconstruction_residual"].as_f64().unwrap() < 1e-10);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lrc.json");
    std::fs::write(
        &cfg,
        r#"{"ensemble": {"arch": "lrc", "n": 2}, "noise": {"type": "depolarizing", "f": 0.995}, "ms": [1], "shots": 1}"#,
    )
    .unwrap();
    let v = json(&frb(&["perturb-check", "--config", cfg.to_str().unwrap()]));
    let s = &v["signals"][0];
    assert_eq!(s["all_hold"], true);
    assert_eq!(s["method"], "dense");
}
