use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;

fn asep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asep")).args(args).env_remove("ASEP_THREADS").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("file exists")).expect("valid json")
}

fn report_schema() -> JSONSchema {
    let o = asep(&["schema"]);
    assert_eq!(code(&o), 0);
    let doc: Value = serde_json::from_str(&stdout(&o)).expect("schema is json");
    JSONSchema::compile(&doc["report"]).expect("schema compiles")
}

#[test]
fn verify_delta_passes_and_report_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = asep(&["--out", out.to_str().unwrap(), "verify-delta", "--n", "2", "--p", "0.7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["command"], "verify-delta");
    assert_eq!(report["passed"], true);
    assert!(report_schema().is_valid(&report));
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "sites,species,value,imag,estimate,oracle");
}

#[test]
fn schema_rejects_a_report_without_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = asep(&["--out", dir.path().to_str().unwrap(), "verify-delta", "--n", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut report = read_json(&dir.path().join("report.json"));
    let schema = report_schema();
    assert!(schema.is_valid(&report));
    report.as_object_mut().unwrap().remove("metrics");
    assert!(!schema.is_valid(&report));
}

#[test]
fn failed_check_exits_two() {
    let o = asep(&["verify-delta", "--n", "2", "--nodes", "8"]);
    assert_eq!(code(&o), 2, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("first counterexample"));
    assert!(stdout(&o).trim_end().ends_with("FAIL"));
}

#[test]
fn invalid_input_exits_one() {
    let o = asep(&["prob", "--p", "0", "--n", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("p != 0"));
    assert_eq!(code(&asep(&["no-such-command"])), 1);
    assert_eq!(code(&asep(&["--threads", "0", "verify-delta", "--n", "1"])), 1);
    assert_eq!(code(&asep(&["--help"])), 0);
}

#[test]
fn manifest_with_unknown_field_is_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    fs::write(&path, "{\n  \"command\": \"prob\",\n  \"instance\": {\"p\": 0.5},\n  \"bogus\": 1\n}\n").unwrap();
    let o = asep(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("line 4"), "{err}");
}

#[test]
fn manifest_run_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let via_manifest = dir.path().join("a");
    let via_flags = dir.path().join("b");
    fs::write(
        &path,
        format!(
            r#"{{"command": "prob", "instance": {{"p": "1/3", "t": 0.5, "Y": [0, 2]}},
                "options": {{"targets": [{{"X": [1, 2]}}, {{"X": [0, 3]}}]}}, "out": {:?}}}"#,
            via_manifest.to_str().unwrap()
        ),
    )
    .unwrap();
    let a = asep(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = asep(&[
        "--out", via_flags.to_str().unwrap(), "prob", "--p", "1/3", "--t", "0.5", "--y", "0,2", "--target", "1,2", "--target", "0,3",
    ]);
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert_eq!(read_json(&via_manifest.join("report.json")), read_json(&via_flags.join("report.json")));
    assert_eq!(fs::read(via_manifest.join("table.csv")).unwrap(), fs::read(via_flags.join("table.csv")).unwrap());
}

#[test]
fn problem_file_with_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("problem.json");
    fs::write(&path, r#"{"p": 0.6, "t": 0.8, "Y": [0, 1], "nu": [2, 1], "window": [-12, 13], "oracle": true}"#).unwrap();
    let out = dir.path().join("out");
    let o = asep(&["--out", out.to_str().unwrap(), "prob", "--problem", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let report = read_json(&out.join("report.json"));
    let allowed = report["metrics"]["oracle_leakage_bound"].as_f64().unwrap() + 1e-9;
    assert!(allowed < 1e-5, "window too narrow for a useful check: {allowed}");
    let mut rows = csv::Reader::from_path(out.join("table.csv")).unwrap();
    let mut n = 0;
    for row in rows.deserialize::<std::collections::HashMap<String, String>>() {
        let row = row.unwrap();
        let v: f64 = row["value"].parse().unwrap();
        let w: f64 = row["oracle"].parse().unwrap();
        assert!((v - w).abs() <= allowed, "{row:?}");
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = asep(&[
            "--threads", threads, "--out", out.to_str().unwrap(), "simulate", "--p", "0.7", "--t", "1", "--y", "0,1", "--trials", "20000",
            "--seed", "7",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (read_json(&out.join("report.json")), fs::read_to_string(out.join("table.csv")).unwrap())
    };
    let (r1, t1) = run("1", "one");
    let (r3, t3) = run("3", "three");
    assert_eq!(r1, r3);
    assert_eq!(t1, t3);
    assert_eq!(t1.lines().next().unwrap(), "sites,species,count,frequency");
    let total: u64 = t1.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 20000);
}

#[test]
fn narrow_window_stays_within_its_leakage_bound() {
    // One spare site on each side: the truncated oracle is far off, and so is
    // its bound.
    let o = asep(&["prob", "--p", "0.6", "--t", "0.8", "--y", "0,1", "--window", "-1,2", "--oracle"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn compare_against_formula_passes() {
    let o = asep(&["compare", "--p", "0.7", "--t", "0.5", "--y", "0,2", "--trials", "20000", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn coefficient_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = asep(&["--out", dir.path().to_str().unwrap(), "coeffs", "--p", "1/3", "--nu", "1,2", "--xi", "1/2,3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = read_json(&dir.path().join("coeffs.json"));
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["value"].as_str().unwrap().contains('/')));
}

#[test]
fn exact_checks_pass() {
    let o = asep(&["verify-braid", "--n", "3", "--points", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = asep(&["verify-second-class", "--n", "3", "--points", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = asep(&["verify-b-classes", "--n", "2"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
}
