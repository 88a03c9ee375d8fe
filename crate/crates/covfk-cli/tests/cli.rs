//! Exit-code contract, determinism and golden results of the `covfk` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn covfk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covfk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("result is JSON")
}

const TRIVIAL: &str = r#"{
  "geometry": {"kind": "circle", "radius": 1.0},
  "bundle": {"preset": "trivial", "rank": 1},
  "psi": [1.0],
  "x": [0.5],
  "t": 1.0,
  "mc": {"n_paths": 512, "dt": 0.05, "seed": 1}
}"#;

#[test]
fn trivial_fk_passes_with_zero_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "fk.json", TRIVIAL);
    let out = covfk(&["fk", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "covfk.result/1");
    assert_eq!(v["pass"], true);
    assert_eq!(v["results"]["estimate"]["stderr"][0], 0.0);
    assert_eq!(
        v["results"]["estimate"]["mean"][0],
        serde_json::json!([1.0, 0.0])
    );
    assert!(v.get("timing").is_none());
}

#[test]
fn malformed_json_exits_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "bad.json", "{\n  \"t\": 1.0,\n  \"geometry\": \n}");
    let out = covfk(&["fk", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:4:1"), "{err}");
}

#[test]
fn unknown_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = TRIVIAL.replace("\"t\": 1.0,", "\"t\": 1.0,\n  \"tt\": 2,");
    let cfg = write_config(&dir, "fk.json", &text);
    let out = covfk(&["fk", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("unknown field `tt`") && err.contains(":7:"),
        "{err}"
    );
}

#[test]
fn semantic_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = TRIVIAL.replace("\"psi\": [1.0]", "\"psi\": [1.0, 2.0]");
    let cfg = write_config(&dir, "fk.json", &text);
    let out = covfk(&["fk", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("psi"));

    let cfg = write_config(
        &dir,
        "chern.json",
        r#"{"N": 2, "alpha0": {}, "mc": {"n_paths": 8, "dt": 0.1}}"#,
    );
    assert_eq!(covfk(&["chern", "--config", &cfg]).status.code(), Some(2));
}

const TRACE: &str = r#"{
  "geometry": {"kind": "circle", "radius": 1.0},
  "bundle": {"preset": "trivial", "rank": 1},
  "perturbation": {"q0": {"terms": [{"mode": [0], "coeff": 1.0}, {"mode": [1], "coeff": 0.5}, {"mode": [-1], "coeff": 0.5}]}},
  "t": 1.0,
  "grid": {"per_axis": 8},
  "mc": {"n_paths": 2048, "dt": 0.02, "seed": 2},
  "oracle": {"cutoff": 16, "dt_constant": 2.0, "delta_constant": 2.0}
}"#;

#[test]
fn trace_preflight_fault_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "trace.json", TRACE);
    let ok = covfk(&["trace", "--config", &cfg]);
    assert_eq!(ok.status.code(), Some(0));
    let v = stdout_json(&ok);
    assert!(v["results"]["preflight"]["defect"].as_f64().unwrap() < 1e-9);

    let bad = covfk(&["trace", "--config", &cfg, "--fault", "identity-check"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("preflight"));
}

#[test]
fn trace_zero_perturbation_is_exactly_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = TRACE.replace(
        r#""perturbation": {"q0": {"terms": [{"mode": [0], "coeff": 1.0}, {"mode": [1], "coeff": 0.5}, {"mode": [-1], "coeff": 0.5}]}}"#,
        r#""perturbation": {}"#,
    );
    let cfg = write_config(&dir, "trace.json", &text);
    let out = covfk(&["trace", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(
        v["results"]["estimate"]["mean"][0],
        serde_json::json!([0.0, 0.0])
    );
    assert_eq!(v["results"]["spectral"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn chern_with_vanishing_alpha1_is_exactly_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "chern.json",
        r#"{"N": 1, "alpha0": {"spatial": {"area": [[[1, 0], [0, 0, 0]]]}},
            "mc": {"n_paths": 96, "dt": 0.1, "bridge_delta": 0.2}}"#,
    );
    let out = covfk(&["chern", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(
        v["results"]["estimate"]["mean"][0],
        serde_json::json!([0.0, 0.0])
    );
    assert_eq!(v["checks"][0]["name"], "alpha1_zero_exact");
}

#[test]
fn validate_detects_christoffel_fault() {
    let good = covfk(&["validate", "--suite", "geometry"]);
    assert_eq!(good.status.code(), Some(0));
    let v = stdout_json(&good);
    assert!(v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["pass"] == true));

    let bad = covfk(&[
        "validate",
        "--suite",
        "transport",
        "--fault",
        "christoffel-sign-flip",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let v = stdout_json(&bad);
    let holonomy = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "transport.tangent_latitude_holonomy")
        .unwrap();
    assert_eq!(holonomy["pass"], false);
}

#[test]
fn validate_all_prints_summary_table() {
    let cfg = configs().join("validate_all.json");
    let out = covfk(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stderr);
    for suite in ["geometry", "paths", "transport", "fk", "trace", "spin"] {
        assert!(table.contains(suite), "{table}");
    }
    assert_eq!(
        stdout_json(&out)["results"]["summary"]
            .as_array()
            .unwrap()
            .len(),
        6
    );
}

#[test]
fn results_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "trace.json", TRACE);
    let one = covfk(&["trace", "--config", &cfg, "--workers", "1", "--seed", "9"]);
    let four = covfk(&["trace", "--config", &cfg, "--workers", "4", "--seed", "9"]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(stdout_json(&one)["config"]["mc"]["seed"], 9);
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "fk.json", TRIVIAL);
    let out = covfk(&["fk", "--config", &cfg, "--timing"]);
    let v = stdout_json(&out);
    assert!(v["timing"]["wall_time_s"].as_f64().is_some());
    assert!(v["results"]["estimate"]["wall_time_s"].as_f64().is_some());
}

/// Golden results live in `tests/golden` unless `COVFK_GOLDEN_DIR` points
/// elsewhere; `COVFK_UPDATE_GOLDEN=1` rewrites them.
#[test]
fn golden_results_match() {
    let golden = std::env::var_os("COVFK_GOLDEN_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden"));
    let update = std::env::var_os("COVFK_UPDATE_GOLDEN").is_some_and(|v| v == "1");
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("fk", "fk_trivial", TRIVIAL),
        ("trace", "trace_small", TRACE),
    ];
    for (command, name, text) in cases {
        let cfg = write_config(&dir, &format!("{name}.json"), text);
        let out = covfk(&[command, "--config", &cfg, "--workers", "2"]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let path = golden.join(format!("{name}.json"));
        if update {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &out.stdout).unwrap();
            continue;
        }
        let expected = std::fs::read(&path)
            .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
        assert_eq!(
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&expected),
            "{name} differs from its golden file"
        );
    }
}
