//! End-to-end tests of the `slowdrive` binary: schema pinning, determinism,
//! exit codes, and sweep plumbing.

use std::path::Path;
use std::process::{Command, Output};

const PINNED_PREAMBLE: &str = "# slowdrive-csv schema_version=1";
const PINNED_HEADER: &str = "t_eq,gamma,t_c,t_h,omega0,tau,fock_dim,time_nodes,P_w,P_W,J_q,\
DeltaP_w,DeltaI_w,ratio_2dIw_over_dPw,sigma_dot,W_ad,w_avg,eta,eta_C,eta_PS,eta_Q,eta_cl,\
f_value,tur_residual,engine_flag";

fn slowdrive(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slowdrive"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SINGLE_POINT: &str = r#"{
  "engine": {
    "kind": "oscillator-analytic",
    "params": { "omega0": 1.0, "t_c": 0.2, "t_h": 2.0, "gamma": 1.0, "tau": 100.0 }
  },
  "output": { "csv": "out.csv" }
}"#;

#[test]
fn golden_csv_header_is_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", SINGLE_POINT);
    let out = slowdrive(&["run", "--config", &config], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), PINNED_PREAMBLE);
    assert_eq!(lines.next().unwrap(), PINNED_HEADER);
    assert_eq!(lines.count(), 1, "single point produces a single row");
}

#[test]
fn identical_config_gives_byte_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", SINGLE_POINT);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out_path in [&a, &b] {
        let out = slowdrive(
            &["run", "--config", &config, "--out", out_path.to_str().unwrap()],
            dir.path(),
        );
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn sweep_produces_one_row_per_point_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{
          "engine": {
            "kind": "oscillator-analytic",
            "params": { "omega0": 1.0, "t_c": 0.2, "t_h": 2.0, "gamma": 1.0, "tau": 100.0 }
          },
          "sweep": [
            { "parameter": "gamma", "range": { "min": 0.5, "max": 8.0, "points": 3, "scale": "log" } },
            { "parameter": "t_c", "values": [0.2, 0.4] }
          ],
          "output": { "csv": "sweep.csv" }
        }"#,
    );
    let out = slowdrive(&["run", "--config", &config], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 6, "preamble + header + 3x2 grid");
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.report.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["points"], 6);
    assert_eq!(sidecar["schema_version"], 1);
    assert!(sidecar["violations"].as_array().unwrap().is_empty());
    assert_eq!(sidecar["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        "{ not json",
        r#"{ "engine": { "kind": "oscillator-analytic",
             "params": { "omega0": 1.0, "t_c": 0.2, "t_h": 2.0, "gamma": 1.0, "tau": 100.0 } },
             "unknown_field": 3 }"#,
        r#"{ "engine": { "kind": "oscillator-analytic",
             "params": { "omega0": 1.0, "t_c": 0.2, "t_h": 2.0, "gamma": 1.0, "tau": 100.0 } },
             "sweep": [ { "parameter": "nope", "values": [1.0] } ] }"#,
    ] {
        let config = write_config(dir.path(), "bad.json", body);
        let out = slowdrive(&["run", "--config", &config, "--out", "x.csv"], dir.path());
        assert_eq!(out.status.code(), Some(2), "body: {body}");
    }
}

#[test]
fn unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = slowdrive(&["verify", "--suite", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_count_plumbing() {
    let dir = tempfile::tempdir().unwrap();
    let out = slowdrive(&["verify", "--suite", "tur", "--seed", "5", "--count", "3"], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let suite = &report["suites"][0];
    assert_eq!(suite["name"], "tur");
    // 3 random protocols + the saturation witness.
    assert_eq!(suite["cases"], 4);
    assert!(suite["failures"].as_array().unwrap().is_empty());
}

#[test]
fn info_reports_resolved_settings() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{
          "engine": {
            "kind": "oscillator-analytic",
            "params": { "omega0": 1.0, "t_c": 0.2, "t_h": 2.0, "gamma": 1.0, "tau": 100.0 }
          },
          "sweep": [ { "parameter": "gamma", "values": [0.5, 1.0, 2.0] } ],
          "output": { "csv": "out.csv" }
        }"#,
    );
    let out = slowdrive(&["info", "--config", &config], dir.path());
    assert!(out.status.success());
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(info["sweep_points"], 3);
    assert!(info["csv_header"].as_str().unwrap().starts_with("t_eq,gamma,"));
}

#[test]
fn custom_engine_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{
          "engine": {
            "kind": "custom-detailed-balanced",
            "spec": {
              "h_base": { "re": [[0.0, 0.1], [0.1, 1.0]] },
              "h_drive": { "re": [[0.0, 0.0], [0.0, 0.6]] },
              "coeffs": [0.3, -0.1],
              "gamma_up": [0.4],
              "t_c": 0.5, "t_h": 1.5, "tau": 40.0
            }
          },
          "numerics": { "initial_nodes": 65, "max_nodes": 1025, "rel_tol": 1e-7 },
          "output": { "csv": "out.csv" }
        }"#,
    );
    let out = slowdrive(&["run", "--config", &config], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let row = csv.lines().nth(2).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 25);
    assert!(!fields[0].is_empty(), "t_eq from spectral gap");
    assert!(fields[1].is_empty(), "no single gamma for custom engines");
}
