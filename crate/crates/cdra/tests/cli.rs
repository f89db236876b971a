//! The `cdra` binary as a user runs it.

mod common;

use std::process::Command;

use common::*;

fn cdra(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cdra")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn graph_of_table2() {
    let t2 = fixture("table2.csv");
    let (code, out, _) = cdra(&["graph", t2.to_str().unwrap(), "--focal", "1234567890"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("graph contacts {"));
    assert_eq!(out.matches(" -- ").count(), 8);
}

#[test]
fn path_starts_at_first_cell_site() {
    let t2 = fixture("table2.csv");
    let (code, out, _) = cdra(&["path", t2.to_str().unwrap(), "--window", "2020-05-01..2020-05-07"]);
    assert_eq!(code, 0);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["features"][0]["geometry"]["coordinates"][0], serde_json::json!([73.1965, 33.5026]));
}

#[test]
fn ingest_reports_bad_rows_and_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    let mut text = read("table2.csv");
    text.push_str("05/02/2020 10:00:00,1234567890,1234567890,Call Incoming,,x,1,1\n");
    std::fs::write(&input, text).unwrap();
    let (code, out, err) = cdra(&["ingest", input.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 16);
    assert!(err.contains("row 16"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(cdra(&["bogus"]).0, 2);
    assert_eq!(cdra(&["graph", "x.csv"]).0, 2);
    let (code, _, err) = cdra(&["graph", "/no/such.csv", "--focal", "1234567890"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("cdra: "));
    assert_eq!(cdra(&["--version"]).0, 0);
}

#[test]
fn ens_sim_prints_report() {
    let (code, out, _) = cdra(&["ens-sim", scenario("case-study-2.json").to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let b = report["devices"].as_array().unwrap().iter().find(|d| d["id"] == "B").unwrap();
    assert_eq!(b["notifications"][0]["tick"], 20);
    let bad = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(bad.path(), "{\"devices\": [}").unwrap();
    let (code, _, err) = cdra(&["ens-sim", bad.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 1"), "{err}");
}
