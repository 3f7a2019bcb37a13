use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn disac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disac"))
        .args(args)
        .env_remove("DISAC_SEED")
        .output()
        .expect("spawn disac")
}

fn small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.json");
    let out = disac(&[
        "scenario",
        "--preset",
        "two-node",
        "--antennas",
        "2",
        "--subcarriers",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn scenario_file_has_schema_version() {
    let dir = tempfile::tempdir().unwrap();
    let v = read_json(&small_scenario(dir.path()));
    assert_eq!(v["schema"], 1);
    assert_eq!(v["ofdm"]["tx_antennas"], 2);
    assert_eq!(v["ofdm"]["subcarriers"], 4);
}

#[test]
fn design_writes_report_covariances_and_precoders() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let out_dir = dir.path().join("p2");
    let out = disac(&[
        "design",
        scn.to_str().unwrap(),
        "--family",
        "p2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["status"], "optimal");
    assert_eq!(report["family"], "p2");
    let relaxed = report["relaxed"]["rcrb_m"].as_f64().unwrap();
    let extracted = report["extracted"]["rcrb_m"].as_f64().unwrap();
    assert!((extracted / relaxed - 1.0).abs() < 1e-4);
    assert!(report["extracted"]["min_sinr_db"].as_f64().unwrap() >= 10.0 - 0.1);
    assert!(out_dir.join("covariances.json").is_file());
    let pre = read_json(&out_dir.join("precoders.json"));
    assert_eq!(pre["antennas"], 2);
}

#[test]
fn infeasible_threshold_exits_two_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let out_dir = dir.path().join("inf");
    let out = disac(&[
        "design",
        scn.to_str().unwrap(),
        "--family",
        "p2",
        "--gamma-db",
        "60",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["status"], "infeasible");
    assert_eq!(report["reason"]["kind"], "sinr_infeasible");
    assert!(report["reason"]["matched_filter_bound_db"].as_f64().unwrap() < 60.0);
}

#[test]
fn schema_error_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let text = std::fs::read_to_string(&scn).unwrap().replace("\"subcarriers\": 4", "\"subcarriers\": \"four\"");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text).unwrap();
    let out = disac(&[
        "design",
        bad.to_str().unwrap(),
        "--family",
        "p1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/ofdm/subcarriers"));
}

fn sweep(scn: &Path, csv: &Path, seed: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_disac"));
    cmd.args([
        "sweep",
        scn.to_str().unwrap(),
        "--axis",
        "gamma",
        "--grid",
        "0:10:20",
        "--families",
        "p2,p3",
        "--no-timing",
        "--out",
        csv.to_str().unwrap(),
    ])
    .env_remove("DISAC_SEED");
    if let Some(s) = seed {
        cmd.env("DISAC_SEED", s);
    }
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read_to_string(csv).unwrap()
}

#[test]
fn sweep_csv_is_reproducible_and_seeded_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let a = sweep(&scn, &dir.path().join("a.csv"), None);
    let b = sweep(&scn, &dir.path().join("b.csv"), None);
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert!(lines[0].starts_with("# units:"));
    assert_eq!(lines[1], "axis,value,family,mode,gamma_db,rcrb_m,rcrb_relaxed_m,sinr_db,wall_ms,status");
    assert_eq!(lines.len(), 2 + 3 * 2);
    let c = sweep(&scn, &dir.path().join("c.csv"), Some("77"));
    let d = sweep(&scn, &dir.path().join("d.csv"), Some("77"));
    assert_eq!(c, d);
    assert_ne!(a, c);
}

#[test]
fn validate_fim_suite_passes() {
    let out = disac(&["validate", "--suite", "fim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[pass]")).count(), 3);
}
