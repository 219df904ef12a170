use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn lrqp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrqp")).args(args).current_dir(dir).output().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TWO_POINTS: &str = "+1 1:1\n-1 1:-1\n";

// x₀ = x₁ on [0, 10]², minimizing ½(x₀ + x₁)² − x₀ − x₁: optimum at x₀ + x₁ = 1.
const SMALL_QP: &str = r#"{
  "u": [[1.0], [1.0]],
  "c": [-1.0, -1.0],
  "a": [[1.0, -1.0]], "b": [0.0],
  "blocks": [{"lo": 0.0, "hi": 10.0}, {"lo": 0.0, "hi": 10.0}]
}"#;

#[test]
fn hard_margin_two_points() {
    let dir = TempDir::new().unwrap();
    write(&dir, "two.svm", TWO_POINTS);
    let out = lrqp(&["train-svm", "two.svm", "--variant", "hard", "--kernel", "linear", "--report", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir.path().join("r.json"));
    assert_eq!(r["schema"], 1);
    assert_eq!(r["command"], "train-svm");
    let obj = r["objective"].as_f64().unwrap();
    assert!((obj - 0.5).abs() < 1e-3, "{obj}");
    for key in ["iterations", "kkt", "timing", "params", "seed", "solution"] {
        assert!(!r[key].is_null(), "missing {key}");
    }
    assert_eq!(r["params"]["svm"]["variant"], "hard");
}

#[test]
fn verify_reproduces_residuals() {
    let dir = TempDir::new().unwrap();
    write(&dir, "two.svm", TWO_POINTS);
    write(&dir, "qp.json", SMALL_QP);
    let cases: [(&[&str], &str); 3] = [
        (&["solve-qp", "qp.json", "--report", "a.json"], "qp.json"),
        (&["train-svm", "two.svm", "--variant", "c-svc", "--report", "a.json"], "two.svm"),
        (&["train-svm", "two.svm", "--variant", "c-svc", "--kernel", "gaussian", "--report", "a.json"], "two.svm"),
    ];
    for (args, input) in cases {
        assert!(lrqp(args, dir.path()).status.success(), "{args:?}");
        let out = lrqp(&["verify", "a.json", input, "--report", "v.json"], dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let v = read_json(&dir.path().join("v.json"));
        assert_eq!(v["verify"]["match"], true);
        assert!(v["verify"]["max_deviation"].as_f64().unwrap() <= 1e-12);
    }
}

#[test]
fn verify_rejects_tampered_report() {
    let dir = TempDir::new().unwrap();
    write(&dir, "qp.json", SMALL_QP);
    assert!(lrqp(&["solve-qp", "qp.json", "--report", "a.json"], dir.path()).status.success());
    let mut r = read_json(&dir.path().join("a.json"));
    let x0 = r["solution"]["x"][0].as_f64().unwrap();
    r["solution"]["x"][0] = (x0 + 1e-3).into();
    std::fs::write(dir.path().join("a.json"), r.to_string()).unwrap();
    assert_eq!(lrqp(&["verify", "a.json", "qp.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn solve_qp_matches_oracle() {
    let dir = TempDir::new().unwrap();
    write(&dir, "qp.json", SMALL_QP);
    let out = lrqp(&["solve-qp", "qp.json", "--epsilon", "1e-4", "--oracle", "--report", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir.path().join("r.json"));
    assert!((r["objective"].as_f64().unwrap() + 0.5).abs() < 1e-3);
    assert!(r["oracle"]["excess"].as_f64().unwrap().abs() < 1e-3);
}

#[test]
fn factor_kernel_reports_certificate() {
    let dir = TempDir::new().unwrap();
    write(&dir, "pts.svm", "1 1:0.1 2:0.3\n-1 1:-0.2\n1 2:0.5\n-1 1:0.4 2:-0.1\n");
    let out = lrqp(&["factor-kernel", "pts.svm", "--epsilon", "1e-6", "--oracle", "--dump", "f.txt", "--report", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let k = &read_json(&dir.path().join("r.json"))["kernel"];
    assert!(k["q"].as_u64().unwrap() > 0);
    assert!(k["k"].as_u64().unwrap() > 0);
    let sup = k["sup_error"].as_f64().unwrap();
    assert!(sup > 0.0 && sup <= 5e-7);
    assert!(k["max_entry_error"].as_f64().unwrap() <= k["entry_bound"].as_f64().unwrap());
    let dump = std::fs::read_to_string(dir.path().join("f.txt")).unwrap();
    assert!(dump.starts_with("# gaussian kernel factorization"));
}

#[test]
fn fixed_seed_is_deterministic() {
    let dir = TempDir::new().unwrap();
    write(&dir, "two.svm", TWO_POINTS);
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let args = ["train-svm", "two.svm", "--backend", "lowrank", "--seed", "7", "--report", name];
        assert!(lrqp(&args, dir.path()).status.success());
        let mut r = read_json(&dir.path().join(name));
        r.as_object_mut().unwrap().remove("timing");
        reports.push(serde_json::to_string(&r).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn model_round_trip_through_predict() {
    let dir = TempDir::new().unwrap();
    write(&dir, "two.svm", TWO_POINTS);
    assert!(lrqp(&["train-svm", "two.svm", "--model", "m.txt", "--report", "t.json"], dir.path()).status.success());
    let out = lrqp(&["predict", "m.txt", "two.svm", "--output", "p.txt", "--report", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let labels: Vec<f64> = std::fs::read_to_string(dir.path().join("p.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(labels, vec![1.0, -1.0]);
    assert_eq!(read_json(&dir.path().join("r.json"))["predict"]["error"], 0.0);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    write(&dir, "two.svm", TWO_POINTS);
    write(&dir, "bad.svm", "+1 3:1 2:1\n");
    write(&dir, "one.svm", "+1 1:1\n+1 1:2\n");
    let code = |args: &[&str]| lrqp(args, dir.path()).status.code();
    assert_eq!(code(&["train-svm", "two.svm", "--bogus"]), Some(64));
    assert_eq!(code(&["frobnicate"]), Some(64));
    assert_eq!(code(&["train-svm", "two.svm", "--kernel", "cubic"]), Some(64));
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["--version"]), Some(0));
    assert_eq!(code(&["train-svm", "missing.svm"]), Some(2));
    assert_eq!(code(&["train-svm", "one.svm"]), Some(2));
    assert_eq!(code(&["train-svm", "two.svm", "--C=-1"]), Some(2));
    let out = lrqp(&["train-svm", "bad.svm"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    write(&dir, "bad.json", "{\"c\": [1.0], \"blocks\": []}");
    assert_eq!(code(&["solve-qp", "bad.json"]), Some(2));
}

#[test]
fn iteration_cap_is_a_solver_failure() {
    let dir = TempDir::new().unwrap();
    write(&dir, "qp.json", SMALL_QP);
    assert_eq!(lrqp(&["solve-qp", "qp.json", "--max-iterations", "2"], dir.path()).status.code(), Some(3));
}
