use std::path::Path;
use std::process::{Command, Output};

use conflab::lab::{from_json_str, RigidityReport, ScanReport, Verdict, CSV_HEADER};
use conflab::sobolev::SobolevConstants;

fn conflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conflab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn torus(resolution: usize, extra: &str) -> String {
    format!(
        r#"{{
  "manifold": {{"family": "flat-torus", "lengths": [1, 1, 1], "resolution": [{r}, {r}, {r}]}},
  "h": {{"kind": "constant", "value": 0.1}},
  "seed": 5{extra}
}}"#,
        r = resolution
    )
}

#[test]
fn constants_subcommand_prints_table() {
    let out = conflab(&["constants"]);
    assert!(out.status.success());
    let table: Vec<SobolevConstants> = from_json_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(table.iter().map(|c| c.n).collect::<Vec<_>>(), vec![3, 4, 5, 6]);
    assert!((table[0].k_n_inv_sq - 5.477904089531329).abs() < 1e-12);

    let out = conflab(&["constants", "--n", "2"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn rigidity_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &torus(8, ""));
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = conflab(&["rigidity", "--config", &config, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let json_a = std::fs::read_to_string(a.join("report.json")).unwrap();
    let json_b = std::fs::read_to_string(b.join("report.json")).unwrap();
    // The echoed output directory differs; everything else is byte-identical.
    assert_eq!(json_a.replace(a.to_str().unwrap(), "#"), json_b.replace(b.to_str().unwrap(), "#"));

    let report: RigidityReport = from_json_str(&json_a).unwrap();
    assert_eq!(report.verdict.status, Verdict::GapPositive);
    assert!(report.timing.wall_clock_seconds.is_none());

    let csv = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert_eq!(lines[1].split(',').count(), CSV_HEADER.len());
    assert!(a.join("j_trace.csv").exists() && a.join("spectrum.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &torus(6, ""));
    let out_dir = dir.path().join("o");
    let out = conflab(&[
        "rigidity",
        "--config",
        &config,
        "--seed",
        "99",
        "--out",
        out_dir.to_str().unwrap(),
        "--wall-clock",
    ]);
    assert!(out.status.success());
    let report: RigidityReport = from_json_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.config.seed, 99);
    assert!(report.timing.wall_clock_seconds.is_some());
}

#[test]
fn invalid_configs_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let bad_resolution = write_config(dir.path(), &torus(3, ""));
    let out = conflab(&["rigidity", "--config", &bad_resolution]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolution"));

    let unknown_key = write_config(dir.path(), &torus(8, r#", "extra": true"#));
    let out = conflab(&["rigidity", "--config", &unknown_key]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));

    let missing = dir.path().join("missing.json");
    let out = conflab(&["rigidity", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    let out = conflab(&["rigidity", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn stage_failure_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &torus(
            6,
            r#", "minimizer": {"max_iterations": 2, "restarts": 2, "el_residual_tol": 1e-30}"#,
        ),
    );
    let out_dir = dir.path().join("o");
    let out = conflab(&["rigidity", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let report: RigidityReport = from_json_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.verdict.status, Verdict::StageFailure);
}

#[test]
fn scan_rejects_large_amplitude_and_runs_small_one() {
    let dir = tempfile::tempdir().unwrap();
    let body = |amp: f64| {
        format!(
            r#"{{"manifold": {{"family": "flat-torus", "lengths": [1, 1, 1], "resolution": [6, 6, 6]}},
               "h": {{"kind": "centered-perturbed", "amplitude": {amp}}}, "seed": 2}}"#
        )
    };
    let config = write_config(dir.path(), &body(100.0));
    let out = conflab(&["scan", "--config", &config, "--trials", "2"]);
    assert_eq!(out.status.code(), Some(4));
    let out = conflab(&["scan", "--config", &config, "--trials", "2", "--override-admissibility", "--out"]);
    assert_eq!(out.status.code(), Some(4), "missing flag value is a usage error");

    let config = write_config(dir.path(), &body(0.05));
    let out_dir = dir.path().join("scan");
    let out = conflab(&[
        "scan",
        "--config",
        &config,
        "--trials",
        "3",
        "--workers",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let scan: ScanReport = from_json_str(&std::fs::read_to_string(out_dir.join("scan.json")).unwrap()).unwrap();
    assert_eq!(scan.trials.len(), 3);
    let rows = std::fs::read_to_string(out_dir.join("scan.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
}

#[test]
fn refine_validates_levels_and_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &torus(6, ""));
    let out = conflab(&["refine", "--config", &config, "--levels", "1"]);
    assert_eq!(out.status.code(), Some(4));
    let out_dir = dir.path().join("refine");
    let out = conflab(&[
        "refine",
        "--config",
        &config,
        "--levels",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("refinement.csv").exists());
}
