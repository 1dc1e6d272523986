use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn confrig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confrig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> (i32, Value) {
    let out = confrig(args);
    let json = serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)));
    (out.status.code().unwrap(), json)
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    dir.join(format!("{}-{name}", std::process::id()))
}

#[test]
fn exactness_passes_with_schema() {
    let (code, r) = report(&["exactness", "--n", "2", "--k", "2", "--trials", "20", "--seed", "7"]);
    assert_eq!(code, 0);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["command"], "exactness");
    assert_eq!(r["aggregate"]["pass"], true);
    assert_eq!(r["trials"].as_array().unwrap().len(), 20);
    assert_eq!(r["config"]["seed"], 7);
}

#[test]
fn reports_are_byte_identical() {
    let args = ["simulate", "--n", "2", "--trials", "2", "--seed", "3", "--grid", "5:2"];
    let a = confrig(&args);
    let b = confrig(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = confrig(&["simulate", "--n", "2", "--trials", "2", "--seed", "4", "--grid", "5:2"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn out_file_matches_stdout() {
    let path = scratch("jets.json");
    let args = ["jets", "--n", "3", "--trials", "2"];
    let out = confrig(&[&args[..], &["--out", path.to_str().unwrap()]].concat());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("jets: pass"));
    assert_eq!(std::fs::read(&path).unwrap(), confrig(&args).stdout);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["exactness", "--n", "1"],
        vec!["simulate", "--eps", "0.5"],
        vec!["simulate", "--perturbation", "shear"],
        vec!["simulate", "--grid", "21"],
        vec!["exactness", "--basis", r#"{"n": 2, "columns": [[1, 0]"#],
        vec!["exactness", "--basis", "/nonexistent/basis.json"],
        vec!["classify", "--basis", r#"{"n": 2, "columns": [[1, 0], [0, 1]]}"#],
        vec!["classify", "--basis", r#"{"n": 2, "columns": [[1, 0], [0, 1]]}"#, "--against", r#"{"n": 2, "columns": [[1, 2], [2, 4]]}"#],
        vec!["frobnicate"],
    ] {
        let out = confrig(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn verification_failure_exits_1() {
    // A cutoff far above the smallest nonzero singular values breaks the
    // rank certification.
    let out = confrig(&["exactness", "--n", "2", "--tol", "10"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn classify_decisions() {
    let id = r#"{"n": 2, "columns": [[1, 0], [0, 1]]}"#;
    let (code, r) = report(&["classify", "--basis", id, "--against", r#"{"n": 2, "columns": [[3, 0], [0, 3]]}"#]);
    assert_eq!(code, 0);
    let v = &r["trials"][0]["verdict"];
    assert_eq!(v["conjugate"], true);
    assert!((v["c"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!((v["t"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let (s, c) = ((std::f64::consts::PI / 6.0).sin(), (std::f64::consts::PI / 6.0).cos());
    let rot = format!(r#"{{"n": 2, "columns": [[{c}, {s}], [{}, {c}]]}}"#, -s);
    let (_, r) = report(&["classify", "--basis", id, "--against", &rot]);
    assert_eq!(r["trials"][0]["verdict"]["conjugate"], true);
    assert!((r["trials"][0]["verdict"]["c"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let (code, r) = report(&["classify", "--basis", id, "--against", r#"{"n": 2, "columns": [[1, 0], [0, 2]]}"#]);
    assert_eq!(code, 0);
    assert_eq!(r["trials"][0]["verdict"]["conjugate"], false);
}

#[test]
fn basis_file_is_read() {
    let path = scratch("basis.json");
    std::fs::write(&path, r#"{"n": 3, "columns": [[1, 0, 0], [0.5, 1, 0], [0, 0.2, 2]]}"#).unwrap();
    let (code, r) = report(&["relations", "--basis", path.to_str().unwrap(), "--eps", "0.1"]);
    assert_eq!(code, 0);
    assert_eq!(r["config"]["n"], 3);
    assert_eq!(r["trials"][0]["basis"][1][0], 0.5);
}

#[test]
fn unperturbed_simulation_is_exact() {
    let (code, r) = report(&["simulate", "--n", "2", "--eps", "0", "--trials", "3", "--grid", "11:3"]);
    assert_eq!(code, 0);
    for t in r["trials"].as_array().unwrap() {
        let c = &t["conjugacy"];
        for v in [
            &t["fixed_point_error"],
            &t["verdict"]["residual"],
            &c["max_residual"],
            &c["max_shift_deviation"],
            &c["max_displacement"],
        ] {
            assert!(v.as_f64().unwrap() <= 1e-10, "{t}");
        }
    }
}

#[test]
fn coarse_fd_step_is_reported() {
    let (code, r) = report(&["jets", "--n", "2", "--fd-step", "1e-2"]);
    assert_eq!(code, 0);
    assert_eq!(r["trials"][0]["fd_enforced"], false);
    assert!(r["trials"][0]["fd_error"].as_f64().unwrap() > 0.0);
}
