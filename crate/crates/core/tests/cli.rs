//! Drives the binary end to end on small inputs.

use std::path::Path;
use std::process::{Command, Output};

use perturbix::io::{read_json, read_triplets, read_vector_csv};

fn perturbix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perturbix")).args(args).env("PERTURBIX_THREADS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = perturbix(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lanford_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let chain = dir.path().join("chain");
    let opt = dir.path().join("opt");
    let resp = dir.path().join("resp");
    ok(&["simulate", "--preset", "lanford", "--steps", "2e5", "--out-dir", s(&sim)]);
    ok(&["ulam", "--trajectory", s(&sim.join("trajectory.bin")), "--preset", "lanford", "--tau", "1", "--counts", "32", "--min-transition-count", "20", "--out-dir", s(&chain)]);
    let meta: serde_json::Value = read_json(&chain.join("ulam.json")).unwrap();
    assert_eq!(meta["n_states"], 32);

    let matrix = chain.join("matrix.txt");
    ok(&["optimize", "--objective", "entropy", "--matrix", s(&matrix), "--out-dir", s(&opt)]);
    let p = read_triplets(&opt.join("perturbation.txt")).unwrap();
    let m = read_triplets(&matrix).unwrap();
    assert_eq!(p.dim(), m.dim());
    assert!(p.sum_axis(ndarray::Axis(0)).iter().all(|c| c.abs() < 1e-12));
    assert!((p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);

    ok(&[
        "respond",
        "--matrix",
        s(&matrix),
        "--perturbation",
        s(&opt.join("perturbation.txt")),
        "--eps",
        "0.002",
        "--times",
        "0,1,2",
        "--ulam",
        s(&chain.join("ulam.json")),
        "--axes",
        "0",
        "--out-dir",
        s(&resp),
    ]);
    let summary: serde_json::Value = read_json(&resp.join("respond.json")).unwrap();
    assert!(summary["entropy_change"].as_f64().unwrap() > 0.0);
    assert!(summary["linear_l1_error"].as_f64().unwrap() < summary["correction_l1"].as_f64().unwrap());
    assert_eq!(read_vector_csv(&chain.join("stationary.csv")).unwrap().len(), 32);
    assert!(resp.join("response.csv").exists() && resp.join("marginal_axis0.csv").exists());
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"count": 3, "n": 12, "seed": 9}"#).unwrap();
    let out = dir.path().join("ens");
    ok(&["ensemble-compare", "--count", "50", "--config", s(&cfg), "--out-dir", s(&out)]);
    let report: serde_json::Value = read_json(&out.join("ensemble_report.json")).unwrap();
    assert_eq!(report["count"], 3);
    assert_eq!(report["n"], 12);
    let echoed: serde_json::Value = read_json(&out.join("config.json")).unwrap();
    assert_eq!(echoed["seed"], 9);
}

#[test]
fn synthetic_orbit_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("upo");
    ok(&["upo", "--observable", "energy", "--profile", "velocity", "--out-dir", s(&out)]);
    let mut table = csv::Reader::from_path(out.join("weights.csv")).unwrap();
    assert_eq!(table.headers().unwrap(), vec!["w", "dw"]);
    let (mut w, mut dw) = (0.0, 0.0);
    for row in table.records() {
        let row = row.unwrap();
        w += row[0].parse::<f64>().unwrap();
        dw += row[1].parse::<f64>().unwrap();
    }
    assert!((w - 1.0).abs() < 1e-12 && dw.abs() < 1e-12);
    assert!(out.join("model.json").exists() && out.join("profile.csv").exists());
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    assert_eq!(perturbix(&["optimize", "--objective", "kl", "--matrix", s(&missing)]).status.code(), Some(3));
    assert_eq!(perturbix(&["simulate", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(perturbix(&["optimize", "--matrix", s(&missing)]).status.code(), Some(2));

    // Too short for any box to reach the occupancy floor.
    let traj = dir.path().join("short.csv");
    std::fs::write(&traj, "0.1\n0.6\n0.3\n0.9\n0.2\n0.7\n").unwrap();
    let args = ["ulam", "--trajectory", s(&traj), "--dt", "1", "--bounds", "0:1", "--counts", "4", "--tau", "1", "--out-dir", s(dir.path())];
    assert_eq!(perturbix(&args).status.code(), Some(4));
}
