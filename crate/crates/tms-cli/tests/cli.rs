//! Black-box tests of the `tms` binary: exit codes, output formats, and the
//! golden comparison table.

use std::path::Path;
use std::process::{Command, Output};

fn tms() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tms"))
}

fn run(args: &[&str]) -> Output {
    tms().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn compare_defaults_match_golden_table() {
    let out = run(&["compare"]);
    assert!(out.status.success());
    let golden = include_str!("data/compare_default.golden");
    assert_eq!(stdout(&out), golden);
}

#[test]
fn compare_table_contains_headline_numbers() {
    let text = stdout(&run(&["compare"]));
    assert!(text.contains("28895.5"));
    assert!(text.contains("70.0015"));
    assert!(text.contains("116.7222"));
    assert!(text.contains("40.03%"));
}

#[test]
fn compare_json_parses_and_carries_the_deltas() {
    let out = run(&["compare", "--json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["edge"]["frames_per_day"], 1_728_000);
    assert_eq!(report["edge"]["bytes_per_day"], 115_776_000u64);
    let rf = report["reduction_factor"].as_f64().unwrap();
    assert!((rf - 28_895.5).abs() < 1.0);
    assert_eq!(report["paper_deltas"].as_array().unwrap().len(), 6);
}

#[test]
fn compare_flags_change_the_arithmetic() {
    let out = run(&["compare", "--json", "--overhead", "1.0", "--bandwidth-mbps", "450"]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let ms = report["cloud"]["per_frame_network_ms"].as_f64().unwrap();
    assert!((ms - 34.42).abs() < 0.01, "{ms}");
}

#[test]
fn conflicting_output_flags_are_a_usage_error() {
    let out = run(&["compare", "--json", "--table"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flags_rejected() {
    let out = run(&["compare", "--frames-per-fortnight", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_missing_file_exits_one() {
    let out = run(&["simulate", "definitely-missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn simulate_runs_scenario_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let scenario = repo_file("configs/scenario.json");
    let out = tms()
        .args([
            "simulate",
            scenario.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            report_path.to_str().unwrap(),
        ])
        .current_dir(repo_root())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["rng_seed"], 7);
    assert_eq!(report["invariants"]["all_ok"], true);
    let per_node = report["per_node"].as_object().unwrap();
    let traffic = per_node.values().next().unwrap();
    assert_eq!(traffic["inference_msgs"], 1200);
    assert_eq!(traffic["inference_bytes"], 1200 * 67);
}

#[test]
fn profiles_list_names_the_five_models() {
    let out = run(&["profiles", "list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in [
        "ssd_mobilenet_v1",
        "ssd_mobilenet_v2",
        "ssdlite_mobiledet",
        "mtd",
        "ti",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
    assert!(text.contains("12.6"));
    assert!(text.contains("0.858"));
}

#[test]
fn twin_set_then_get_round_trips_through_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let id = "siteA/000000000000000000000000000000ff";
    let out = tms()
        .env("TMS_DATA_DIR", dir.path())
        .args(["twin", "set", id, "features/traffic/properties/count", "17"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("revision 2")); // create + set

    let out = tms()
        .env("TMS_DATA_DIR", dir.path())
        .args(["twin", "get", id])
        .output()
        .unwrap();
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["features"]["traffic"]["properties"]["count"], 17);

    let out = tms()
        .env("TMS_DATA_DIR", dir.path())
        .args(["twin", "get", "siteA/00000000000000000000000000000001"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_answers_twin_api_requests() {
    use std::io::{Read, Write};

    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = tms()
        .env("TMS_DATA_DIR", dir.path())
        .args([
            "serve",
            "--twin-api-addr",
            &addr,
            "--agents",
            repo_file("configs/agents.json").to_str().unwrap(),
            "--rules",
            repo_file("configs/rules.json").to_str().unwrap(),
            "--tick-ms",
            "50",
        ])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();

    // poll until the API lists the agent's twin (it appears after the
    // dispatcher routes the first message)
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(15);
    let mut listed = String::new();
    while std::time::Instant::now() < deadline {
        std::thread::sleep(std::time::Duration::from_millis(200));
        let Ok(mut stream) = std::net::TcpStream::connect(&addr) else {
            continue;
        };
        stream
            .write_all(b"GET /twins HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).ok();
        if response.starts_with("HTTP/1.1 200") && response.contains("crossing-north") {
            listed = response;
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(
        listed.contains("crossing-north/00000000000000000000000000000a01"),
        "twin never appeared via the API"
    );
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn repo_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
}

fn repo_file(rel: &str) -> std::path::PathBuf {
    repo_root().join(rel)
}
