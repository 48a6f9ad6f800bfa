//! End-to-end checks of the `cdp` binary: subcommand wiring, file formats,
//! exit codes, and reproducibility across invocations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cdp")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn cdp")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p
}

const HIERARCHY: &str = "node,parent,level\nroot,,1\na,root,2\nb,root,2\nc,root,2\n";
const COUNTS: &str = "node,count\na,10\nb,20\nc,30\n";

#[test]
fn oracle_condition_and_image() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(
        dir.path(),
        "scenario.json",
        r#"{
            "worlds": ["w1", "w2", "w3", "w4"],
            "probs": [0.0, 0.7, 0.3, 0.0],
            "events": { "e": ["w3", "w4"] },
            "closest": { "e": { "w1": "w3", "w2": "w4" } }
        }"#,
    );
    let s = scenario.to_str().unwrap();

    let out = run(&["oracle", "--scenario", s, "--event", "e", "--op", "condition"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["probs"], serde_json::json!([0.0, 0.0, 1.0, 0.0]));

    let out = run(&["oracle", "--scenario", s, "--event", "e", "--op", "image"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["probs"], serde_json::json!([0.0, 0.0, 0.3, 0.7]));

    let out = run(&["oracle", "--scenario", s, "--event", "e", "--op", "prob"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["prob"], serde_json::json!(0.3));

    // unknown event is a clean failure
    let out = run(&["oracle", "--scenario", s, "--event", "nope", "--op", "prob"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn perturb_is_seeded_and_parses() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "counts.csv", COUNTS);
    let out1 = dir.path().join("n1.csv");
    let out2 = dir.path().join("n2.csv");
    for out in [&out1, &out2] {
        let st = run(&[
            "perturb",
            "--input",
            input.to_str().unwrap(),
            "--mechanism",
            "laplace",
            "--epsilon",
            "1.0",
            "--seed",
            "7",
            "--output",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success());
    }
    let a = std::fs::read_to_string(&out1).unwrap();
    let b = std::fs::read_to_string(&out2).unwrap();
    assert_eq!(a, b, "same seed must give identical output");
    assert!(a.starts_with("node,value\n"));
    assert_eq!(a.lines().count(), 4);

    // gaussian requires --delta
    let st = run(&[
        "perturb",
        "--input",
        input.to_str().unwrap(),
        "--mechanism",
        "gaussian",
        "--epsilon",
        "1.0",
        "--seed",
        "7",
        "--output",
        out1.to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(1));
}

#[test]
fn condition_emits_consistent_draws_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let h = write(dir.path(), "h.csv", HIERARCHY);
    let c = write(dir.path(), "counts.csv", COUNTS);
    let samples = dir.path().join("samples.csv");
    let diag = dir.path().join("diag.json");
    let st = run(&[
        "condition",
        "--counts",
        c.to_str().unwrap(),
        "--hierarchy",
        h.to_str().unwrap(),
        "--epsilon",
        "1.0",
        "--samples",
        "50",
        "--burnin",
        "2000",
        "--seed",
        "3",
        "--nonneg",
        "--output",
        samples.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));

    let text = std::fs::read_to_string(&samples).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, vec!["a", "b", "c", "root"]);
    let mut n = 0;
    for line in lines {
        let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((vals[0] + vals[1] + vals[2] - vals[3]).abs() < 1e-9);
        assert!(vals.iter().all(|&v| v >= 0.0), "nonneg flag must hold");
        n += 1;
    }
    assert_eq!(n, 50);

    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert!(d["acceptance_rate"].as_f64().unwrap() > 0.0);
    assert!(d["ess"].as_f64().is_some());
}

#[test]
fn project_and_image_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let h = write(dir.path(), "h.csv", HIERARCHY);
    let noisy = write(
        dir.path(),
        "noisy.csv",
        "node,value\na,11.2\nb,18.7\nc,31.4\nroot,55.0\n",
    );
    let outp = dir.path().join("consistent.csv");
    let st = run(&[
        "project",
        "--counts",
        noisy.to_str().unwrap(),
        "--hierarchy",
        h.to_str().unwrap(),
        "--output",
        outp.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let text = std::fs::read_to_string(&outp).unwrap();
    let mut vals = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        let (name, v) = line.split_once(',').unwrap();
        vals.insert(name.to_string(), v.parse::<f64>().unwrap());
    }
    // closed-form projection of (11.2, 18.7, 31.4, 55.0) onto a+b+c = root
    assert!((vals["a"] - 9.625).abs() < 1e-9);
    assert!((vals["root"] - 56.575).abs() < 1e-9);

    let c = write(dir.path(), "counts.csv", COUNTS);
    let imaged = dir.path().join("imaged.csv");
    let st = run(&[
        "image",
        "--counts",
        c.to_str().unwrap(),
        "--hierarchy",
        h.to_str().unwrap(),
        "--epsilon",
        "1.0",
        "--samples",
        "3",
        "--seed",
        "5",
        "--output",
        imaged.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let text = std::fs::read_to_string(&imaged).unwrap();
    assert_eq!(text.lines().count(), 4);
    for line in text.lines().skip(1) {
        let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((vals[0] + vals[1] + vals[2] - vals[3]).abs() < 1e-9);
    }
}

#[test]
fn verify_reports_all_claims() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let st = run(&["verify", "--output", report.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let obj = v.as_object().unwrap();
    for key in [
        "laplace_calibration",
        "variance_sandwich_n3",
        "privacy_audit_unconstrained",
        "privacy_audit_conditioned_sum_zero",
        "kl_conditioning_example",
        "mh_conditioned_variance_n3",
        "conjecture_conditioning_beats_imaging",
    ] {
        assert!(obj.contains_key(key), "missing claim {key}");
        assert_ne!(obj[key]["status"], "fail", "claim {key} failed");
    }
}

#[test]
fn bench_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{
            "epsilons": [0.5, 1.0],
            "mechanisms": ["topdown", "image"],
            "repetitions": 3,
            "seed": 11,
            "synth": { "branching": [3, 2], "leaf_mean": 40.0 },
            "mh_burn_in": 500
        }"#,
    );
    let out = dir.path().join("results.csv");
    let st = run(&["bench", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("epsilon,level,mechanism,mean_l1,std_l1"));
    // 2 mechanisms x 2 epsilons x (3 levels + overall)
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 4);
    assert!(dir.path().join("results.json").exists());

    // rejection on an equality hierarchy cannot succeed: partial sweep, exit 2
    let cfg2 = write(
        dir.path(),
        "cfg2.json",
        r#"{
            "epsilons": [1.0],
            "mechanisms": ["rejection", "topdown"],
            "repetitions": 2,
            "seed": 11,
            "synth": { "branching": [3, 2], "leaf_mean": 40.0 }
        }"#,
    );
    let st = run(&["bench", "--config", cfg2.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));

    // bad config: exit 1
    let bad = write(dir.path(), "bad.json", r#"{ "epsilons": [], "mechanisms": [], "repetitions": 0, "seed": 1 }"#);
    let st = run(&["bench", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(1));
}
