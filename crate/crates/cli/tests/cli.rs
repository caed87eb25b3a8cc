use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SCALAR_FORCED: &str = r#"{"m":1,"L":2,"sigma_x":[[1.0]],
  "distortions":{"1,1":[[0.25]],"2,1":[[1.0]],"2,2":[[1.0]]}}"#;
const SCALAR_SYMMETRIC: &str = r#"{"m":1,"L":2,"sigma_x":[[1.0]],
  "distortions":{"1,1":[[0.3]],"2,1":[[0.5]],"2,2":[[0.5]]}}"#;
const MATRIX: &str = r#"{"m":2,"L":2,"sigma_x":[[1.0,0.3],[0.3,1.0]],
  "distortions":{"1,1":[[0.3,0.0],[0.0,0.3]],"2,1":[[0.7,0.1],[0.1,0.7]],"2,2":[[0.6,0.0],[0.0,0.6]]}}"#;
const THREE: &str = r#"{"M":3,"sigma_x":[[1.0]],"constraints":[
  {"subset":[1,2,3],"d":[[0.2]]},{"subset":[1,2],"d":[[0.5]]},
  {"subset":[1],"d":[[0.8]]},{"subset":[2],"d":[[0.8]]},{"subset":[3],"d":[[0.7]]}]}"#;
const OVERLAP: &str = r#"{"M":3,"sigma_x":[[1.0]],"constraints":[
  {"subset":[1,2],"d":[[0.5]]},{"subset":[2,3],"d":[[0.5]]}]}"#;

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], file: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdtree")).args(args).arg(file).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn solve_forced_optimum_is_verified() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "s.json", SCALAR_FORCED);
    let out = run(&["solve"], &f);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert!((r["value_nats"].as_f64().unwrap() - 0.5 * 4f64.ln()).abs() < 1e-6);
    assert_eq!(r["certificate_status"], "VERIFIED");
    assert!(r["epsilon_used"].as_f64().is_some());
    assert_eq!(r["epsilon_sequence"].as_array().unwrap().len(), 3);
}

#[test]
fn bits_changes_display_only() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "s.json", SCALAR_SYMMETRIC);
    let nats = json(&run(&["solve", "--no-timing"], &f));
    let bits = json(&run(&["solve", "--no-timing", "--bits"], &f));
    assert_eq!(nats["value_nats"], bits["value_nats"]);
    let v = nats["value_nats"].as_f64().unwrap();
    assert!((bits["display_value"].as_f64().unwrap() - v / std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(bits["display_unit"], "bits");
}

#[test]
fn solve_is_deterministic_without_timings() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "m.json", MATRIX);
    let a = run(&["solve", "--no-timing"], &f);
    let b = run(&["solve", "--no-timing"], &f);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn malformed_json_exits_2() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "bad.json", "{\"m\": 1,");
    let out = run(&["solve"], &f);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "MalformedJson");
}

#[test]
fn asymmetric_matrix_exits_2() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "a.json", &MATRIX.replace("[[1.0,0.3],[0.3,1.0]]", "[[1.0,0.3],[0.2,1.0]]"));
    let out = run(&["solve"], &f);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "NotSymmetric");
}

#[test]
fn verify_mc_within_bound_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "s.json", SCALAR_FORCED);
    let args = ["verify", "--mc-samples", "1000000", "--seed", "1"];
    let a = run(&args, &f);
    assert_eq!(a.status.code(), Some(0));
    let ra = json(&a);
    let mc = &ra["mc"];
    assert!(mc["u_cov"]["deviation"].as_f64().unwrap() < 0.01);
    let rb = json(&run(&args, &f));
    assert_eq!(serde_json::to_string(mc).unwrap(), serde_json::to_string(&rb["mc"]).unwrap());
}

#[test]
fn verify_zero_samples_exits_2() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "s.json", SCALAR_FORCED);
    let out = run(&["verify", "--mc-samples", "0"], &f);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "InvalidSampleCount");
}

#[test]
fn oracle_matches_solver_on_scalar() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "s.json", SCALAR_SYMMETRIC);
    let o = run(&["oracle", "--resolution", "1e-6"], &f);
    assert_eq!(o.status.code(), Some(0));
    let grid = json(&o)["value_nats"].as_f64().unwrap();
    let solved = json(&run(&["solve"], &f))["value_nats"].as_f64().unwrap();
    assert!((grid - solved).abs() < 1e-5, "{grid} vs {solved}");
}

#[test]
fn oracle_rejects_matrix_instance() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "m.json", MATRIX);
    let out = run(&["oracle"], &f);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "UnsupportedDimension");
}

#[test]
fn pad_three_descriptions() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "g.json", THREE);
    let out = run(&["pad"], &f);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["instance"]["L"], 3);
    assert_eq!(r["instance"]["distortions"].as_object().unwrap().len(), 7);
    let dummies = r["padding"]["dummy_nodes"].as_array().unwrap();
    assert!(!dummies.is_empty());
    for d in dummies {
        assert_eq!(r["instance"]["distortions"][d.as_str().unwrap()], serde_json::json!([[1.0]]));
    }
    // The padded instance is itself a valid input.
    let padded = write(&dir, "p.json", &r["instance"].to_string());
    assert_eq!(run(&["solve"], &padded).status.code(), Some(0));
}

#[test]
fn pad_overlapping_subsets_exits_2() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "o.json", OVERLAP);
    let out = run(&["pad"], &f);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "NotATree");
}
