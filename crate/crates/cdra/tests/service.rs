//! The HTTP service end to end: investigations, restart replay, concurrency,
//! parity with the CLI, auth, exposure keys, quarantine and the webhook.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;

use cdra::service::Background;
use common::*;
use serde_json::{json, Value};

fn start(dir: &std::path::Path) -> (Background, Client) {
    let svc = Background::start(config(dir)).unwrap();
    let client = Client::new(svc.url(""));
    (svc, client)
}

fn open_cs1(c: &Client) -> Value {
    let (status, body) = c.post(
        "/cases",
        &json!({"case_id": "cs1", "index": "1234567890", "window": "2020-05-01..2020-05-07", "csv": read("table2.csv")}),
    );
    assert_eq!(status, 201, "{body}");
    body
}

/// Drives the first case study through the API.
fn run_cs1(c: &Client) -> Value {
    open_cs1(c);
    let (s, _) = c.post("/cases/cs1/confirm", &json!({"patient": "A", "contacts": ["C", "D", "E"]}));
    assert_eq!(s, 200);
    let (s, _) = c.post(
        "/cases/cs1/tests",
        &json!({"subscriber": "D", "result": "positive", "reported_at": "2020-05-17T09:00:00"}),
    );
    assert_eq!(s, 200);
    let (s, body) = c.post(
        "/cases/cs1/cdra",
        &json!({"patient": "D", "window": "2020-05-01..2020-05-16", "csv": read("table3.csv")}),
    );
    assert_eq!(s, 200, "{body}");
    body["case"].clone()
}

fn status_of(case: &Value, number: &str) -> String {
    case["web"]["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|n| n["subscriber"] == number)
        .unwrap_or_else(|| panic!("{number} not in web"))["status"]
        .as_str()
        .unwrap()
        .to_string()
}

#[test]
fn case_round_trip_and_case_study() {
    let dir = tempfile::tempdir().unwrap();
    let (_svc, c) = start(dir.path());
    let created = open_cs1(&c);
    assert!(created["diagnostics"].as_array().unwrap().is_empty());
    let (s, fetched) = c.get_json("/cases/cs1");
    assert_eq!(s, 200);
    assert_eq!(fetched, created["case"]);

    let case = run_cs1_after_open(&c);
    assert!(case["pending_cdra"].as_array().unwrap().is_empty());
    assert_eq!(status_of(&case, "17171717171"), "patient");
    assert_eq!(status_of(&case, "9876543210"), "patient");
    let (_, listed) = c.get_json("/cases");
    assert_eq!(listed, json!(["cs1"]));
}

fn run_cs1_after_open(c: &Client) -> Value {
    c.post("/cases/cs1/confirm", &json!({"patient": "A", "contacts": ["C", "D", "E"]}));
    c.post("/cases/cs1/tests", &json!({"subscriber": "D", "result": "positive"}));
    let (_, body) = c.post(
        "/cases/cs1/cdra",
        &json!({"patient": "D", "window": "2020-05-01..2020-05-16", "csv": read("table3.csv")}),
    );
    body["case"].clone()
}

#[test]
fn raw_csv_body_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (_svc, c) = start(dir.path());
    let (s, body) = c.post_csv("/cases?index=1234567890&window=2020-05-01..2020-05-07", &read("table2.csv"));
    assert_eq!(s, 201, "{body}");
    assert_eq!(body["case"]["case_id"], "case-1");
    // Duplicate id, unknown case, bad window, unknown label.
    let (s, _) = c.post_csv("/cases?case_id=case-1&index=1234567890", &read("table2.csv"));
    assert_eq!(s, 409);
    assert_eq!(c.get("/cases/nope").0, 404);
    assert_eq!(c.post_csv("/cases?index=1234567890&window=bogus", "").0, 400);
    let (s, _) = c.post("/cases/case-1/confirm", &json!({"patient": "A", "contacts": ["ZZ"]}));
    assert_eq!(s, 422);
    // Rejected transitions leave no trace.
    let (_, case) = c.get_json("/cases/case-1");
    assert_eq!(case["audit"].as_array().unwrap().len(), 1);
}

#[test]
fn restart_replays_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let (_svc, c) = start(dir.path());
        run_cs1(&c)
    };
    let (_svc, c) = start(dir.path());
    let (_, after) = c.get_json("/cases/cs1");
    assert_eq!(after, before);
    let (_, health) = c.get_json("/health");
    assert_eq!(health["mutations"], 4);
}

#[test]
fn concurrent_results_are_both_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, c) = start(dir.path());
    open_cs1(&c);
    c.post("/cases/cs1/confirm", &json!({"patient": "A", "contacts": ["C", "D", "E"]}));
    let base = svc.url("");
    let handles: Vec<_> = ["C", "E"]
        .into_iter()
        .map(|who| {
            let base = base.clone();
            std::thread::spawn(move || {
                Client::new(base).post("/cases/cs1/tests", &json!({"subscriber": who, "result": "negative"}))
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().0, 200);
    }
    let (_, case) = c.get_json("/cases/cs1");
    assert_eq!(case["test_log"].as_array().unwrap().len(), 2);
    let commands: Vec<&str> = case["audit"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["command"].as_str().unwrap())
        .collect();
    assert_eq!(commands.iter().filter(|c| **c == "record_test").count(), 2, "{commands:?}");
    assert_eq!(status_of(&case, "15151515151"), "cleared");
    assert_eq!(status_of(&case, "18181818181"), "cleared");
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let args = std::iter::once("cdra").chain(args.iter().copied());
    let code = cdra::cli::run(args, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn cli_and_api_exports_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_svc, c) = start(dir.path());
    open_cs1(&c);
    let t2 = fixture("table2.csv");
    let t2 = t2.to_str().unwrap();
    for (format, query) in [("dot", "dot"), ("json", "json")] {
        let (code, local) = cli(&["graph", t2, "--focal", "1234567890", "--window", "2020-05-01..2020-05-07", "--format", format]);
        assert_eq!(code, 0);
        let (s, remote) = c.get(&format!("/cases/cs1/graph?format={query}"));
        assert_eq!(s, 200);
        assert_eq!(local, remote, "{format}");
    }
    let (code, local) = cli(&["path", t2, "--window", "2020-05-01..2020-05-07"]);
    assert_eq!(code, 0);
    assert_eq!(local, c.get("/cases/cs1/paths/1234567890").1);
    assert_eq!(local, c.get("/cases/cs1/paths/A").1);
}

#[test]
fn remote_cli_matches_local_store() {
    let remote_dir = tempfile::tempdir().unwrap();
    let local_dir = tempfile::tempdir().unwrap();
    let mut cfg = config(remote_dir.path());
    cfg.api_token = Some("s3cret".into());
    let svc = Background::start(cfg).unwrap();
    let base = svc.url("");
    let local = local_dir.path().to_str().unwrap().to_string();
    let t2 = fixture("table2.csv").to_str().unwrap().to_string();
    let t3 = fixture("table3.csv").to_str().unwrap().to_string();
    let steps: Vec<Vec<&str>> = vec![
        vec!["open", "--case", "k", "--index", "1234567890", "--window", "2020-05-01..2020-05-07", &t2],
        vec!["confirm", "--case", "k", "--patient", "A", "C", "D", "E"],
        vec!["test", "--case", "k", "D", "positive"],
        vec!["attach", "--case", "k", "--patient", "D", "--window", "2020-05-01..2020-05-16", &t3],
    ];
    for step in &steps {
        let mut l = vec!["case", "--store", &local];
        l.extend(step);
        assert_eq!(cli(&l).0, 0, "{step:?}");
        let mut r = vec!["case", "--remote", &base, "--token", "s3cret"];
        r.extend(step);
        assert_eq!(cli(&r).0, 0, "{step:?}");
    }
    let l = cli(&["case", "--store", &local, "graph", "--case", "k"]).1;
    let r = cli(&["case", "--remote", &base, "--token", "s3cret", "graph", "--case", "k"]).1;
    assert_eq!(l, r);
    assert!(l.contains("\"9876543210\""));
    let l = cli(&["case", "--store", &local, "path", "--case", "k", "9876543210"]).1;
    let r = cli(&["case", "--remote", &base, "--token", "s3cret", "path", "--case", "k", "9876543210"]).1;
    assert_eq!(l, r);
    // Wrong token fails with a message, not a panic.
    assert_eq!(cli(&["case", "--remote", &base, "--token", "nope", "show", "--case", "k"]).0, 1);
}

#[test]
fn api_token_guards_everything_but_the_console() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.api_token = Some("t0ken".into());
    let svc = Background::start(cfg).unwrap();
    let anon = Client::new(svc.url(""));
    assert_eq!(anon.get("/cases").0, 401);
    assert_eq!(anon.get("/health").0, 401);
    let (s, page) = anon.get("/ui");
    assert_eq!(s, 200);
    assert!(page.contains("cdra console"));
    assert_eq!(Client::new(svc.url("")).with_token("wrong").get("/cases").0, 401);
    assert_eq!(Client::new(svc.url("")).with_token("t0ken").get("/cases").0, 200);
}

#[test]
fn diagnosis_keys_publish_and_page() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.verification_tokens = vec!["lab-77".into()];
    let svc = Background::start(cfg).unwrap();
    let c = Client::new(svc.url(""));
    let key = |v: &str, from: &str, to: &str| json!({"value": v, "valid_from": from, "valid_to": to});
    let upload = json!({
        "keys": [key("0042", "2020-05-01T09:00:00", "2020-05-01T09:15:00"),
                 key("7311", "2020-05-01T09:15:00", "2020-05-01T09:27:00")],
        "verification_token": "lab-77",
        "uploaded_at": "2020-05-02T09:00:00",
    });
    let (s, body) = c.post("/ens/diagnosis-keys", &upload);
    assert_eq!(s, 201, "{body}");
    assert_eq!(body["accepted"], 2);
    let mut bad = upload.clone();
    bad["verification_token"] = json!("forged");
    assert_eq!(c.post("/ens/diagnosis-keys", &bad).0, 403);
    bad["verification_token"] = json!(" ");
    assert_eq!(c.post("/ens/diagnosis-keys", &bad).0, 403);

    let mut odd = upload.clone();
    odd["keys"][0]["value"] = json!("042");
    assert_eq!(c.post("/ens/diagnosis-keys", &odd).0, 422);
    let mut odd = upload.clone();
    odd["keys"][0]["valid_to"] = json!("2020-05-01T10:00:00");
    assert_eq!(c.post("/ens/diagnosis-keys", &odd).0, 422);

    let (_, page) = c.get_json("/ens/diagnosis-keys");
    assert_eq!(page["min_exposure_minutes"], 10);
    assert_eq!(page["keys"].as_array().unwrap().len(), 2);
    assert_eq!(page["next"], 2);
    let (_, rest) = c.get_json("/ens/diagnosis-keys?since=2");
    assert!(rest["keys"].as_array().unwrap().is_empty());
    assert_eq!(rest["next"], 2);
    // The public feed never carries the verification token.
    assert!(!c.get("/ens/diagnosis-keys").1.contains("lab-77"));
}

#[test]
fn quarantine_alerts_and_advisories() {
    let dir = tempfile::tempdir().unwrap();
    let (_svc, c) = start(dir.path());
    let tag = json!({"subscriber": "9876543210", "latitude": 33.6844, "longitude": 72.98836,
                     "radius_m": 500.0, "window": "2020-05-17..2020-05-31"});
    assert_eq!(c.post("/quarantine/tags", &tag).0, 201);
    let ping = |lat: f64, lon: f64| {
        c.post(
            "/quarantine/pings",
            &json!({"subscriber": "9876543210", "latitude": lat, "longitude": lon, "at": "2020-05-18T12:00:00"}),
        )
        .1
    };
    assert_eq!(ping(33.6844, 72.98836)["outcome"], "inside");
    assert_eq!(ping(33.5026, 73.1965)["outcome"], "alert");
    assert_eq!(ping(33.5026, 73.1965)["outcome"], "continuing");
    let (_, alerts) = c.get_json("/alerts");
    assert_eq!(alerts["alerts"].as_array().unwrap().len(), 1);
    assert_eq!(alerts["next"], 1);
    let (_, none) = c.get_json("/alerts?since=1");
    assert!(none["alerts"].as_array().unwrap().is_empty());
    let (s, _) = c.post(
        "/quarantine/pings",
        &json!({"subscriber": "12121212121", "latitude": 0.0, "longitude": 0.0}),
    );
    assert_eq!(s, 404);

    open_cs1(&c);
    let (s, adv) = c.post("/advisories", &json!({"case_id": "cs1", "subscriber": "A"}));
    assert_eq!(s, 201, "{adv}");
    assert_eq!(adv["advisory_id"], "adv-1");
    let text = adv.to_string();
    assert!(!text.contains("1234567890"));
    let (_, listed) = c.get_json("/advisories");
    assert_eq!(listed.as_array().unwrap().len(), 1);
}

/// A one-shot HTTP sink standing in for the health department.
fn department() -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/notify", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        stream
            .write_all(b"HTTP/1.1 204 No Content\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
            .unwrap();
        tx.send(String::from_utf8(body).unwrap()).unwrap();
    });
    (url, rx)
}

#[test]
fn exposure_import_notifies_department_for_consenting_contacts() {
    let dir = tempfile::tempdir().unwrap();
    let (url, rx) = department();
    let mut cfg = config(dir.path());
    cfg.department_webhook = Some(url);
    let svc = Background::start(cfg).unwrap();
    let c = Client::new(svc.url(""));
    open_cs1(&c);
    let note = json!({"upload": 1, "matched_key": "0042", "exposure_start": "2020-05-05T10:00:00",
                      "exposure_end": "2020-05-05T10:12:00", "cumulative_minutes": 12});
    let (s, case) = c.post(
        "/ens/exposures/import",
        &json!({"case_id": "cs1", "source": "A", "exposures": [
            {"notification": note, "subscriber": "30303030303", "consent": true},
            {"notification": note, "subscriber": "40404040404", "consent": false}]}),
    );
    assert_eq!(s, 200, "{case}");
    assert_eq!(status_of(&case, "30303030303"), "suspect");
    let text = case.to_string();
    assert!(!text.contains("40404040404"));
    let sent = rx.recv_timeout(std::time::Duration::from_secs(10)).unwrap();
    let sent: Value = serde_json::from_str(&sent).unwrap();
    assert_eq!(sent["case_id"], "cs1");
    assert_eq!(sent["exposures"].as_array().unwrap().len(), 1);
    assert_eq!(sent["exposures"][0]["subscriber"], "30303030303");
}
