use std::process::Command;

use compass_cli::{main_with, EXIT_MISMATCH, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE};
use serde_json::Value;

fn compass(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("compass")
        .chain(args.iter().copied())
        .map(String::from);
    let code = main_with(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn temp_path(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("compass-cli-{}-{name}", std::process::id()))
}

#[test]
fn compile_reports_sizes_and_dot() {
    let (code, out, _) = compass(&["compile"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("states 57"));
    let (_, dot, _) = compass(&["compile", "--emit", "dot"]);
    assert!(dot.starts_with("digraph lts {"));
    let (_, json, _) = compass(&["--format", "machine-readable", "compile"]);
    let v: Value = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(v["stats"]["change_states"], 38);
}

#[test]
fn state_cap_is_a_pipeline_error() {
    let (code, _, err) = compass(&["--max-states", "10", "compile"]);
    assert_eq!(code, EXIT_PIPELINE);
    assert!(err.contains("too large"));
}

#[test]
fn monitors_summary_and_dot() {
    let (code, out, _) = compass(&["monitors"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("P2 liveness 1:green 2:yellow 3:red"));
    let (_, dot, _) = compass(&["monitors", "--emit", "dot"]);
    assert_eq!(dot.matches("digraph").count(), 3);
}

#[test]
fn run_stops_at_violation_and_saves_trace() {
    let path = temp_path("t2.json");
    let (code, out, _) = compass(&["run", "t2", "--trace", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("violation: P2 before `TER`"));
    let (code, out, _) = compass(&["plan", "--trace", path.to_str().unwrap(), "-k", "10"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("2 plans"));
    std::fs::remove_file(path).ok();
}

#[test]
fn plan_and_execute() {
    let (code, out, err) = compass(&[
        "plan",
        "t2",
        "-k",
        "15",
        "--relevant",
        "--filter",
        "--execute",
        "3",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.lines().nth(2).unwrap().contains("pickAirport"));
    assert!(err.contains("executed plan 3: completed"));
    let (code, _, err) = compass(&["plan", "t2", "-k", "10", "--execute", "99"]);
    assert_eq!(code, EXIT_PIPELINE);
    assert!(err.contains("no plan with rank 99"));
}

#[test]
fn analyze_lists_relevant_states() {
    let (code, all, _) = compass(&["analyze", "t1"]);
    assert_eq!(code, EXIT_OK);
    let (_, relevant, _) = compass(&["analyze", "t1", "--relevant"]);
    assert!(relevant.lines().count() < all.lines().count());
    assert!(relevant.lines().last().unwrap().ends_with("9 relevant"));
}

#[test]
fn table_rows_as_json() {
    let (code, out, _) = compass(&["--format", "json", "table", "t1"]);
    assert_eq!(code, EXIT_OK);
    let rows: Vec<Value> = serde_json::from_str(out.trim()).unwrap();
    let plans: Vec<u64> = rows.iter().map(|r| r["plans"].as_u64().unwrap()).collect();
    assert_eq!(plans, [3, 6, 9, 12, 12, 12]);
    assert!(rows.iter().all(|r| r["vars"].is_null()));

    let (_, out, _) = compass(&["--format", "json", "table", "t1", "--relevant"]);
    let rows: Vec<Value> = serde_json::from_str(out.trim()).unwrap();
    let plans: Vec<u64> = rows.iter().map(|r| r["plans"].as_u64().unwrap()).collect();
    assert_eq!(plans, [1, 3, 6, 9, 9, 9]);
}

#[test]
fn table_is_deterministic_apart_from_timing() {
    let strip = |s: String| -> Vec<String> {
        s.lines()
            .map(|l| {
                l.rsplit_once(' ')
                    .map(|(head, _)| head.to_string())
                    .unwrap_or_default()
            })
            .collect()
    };
    let a = strip(compass(&["table", "t2", "--k-to", "15"]).1);
    let b = strip(compass(&["table", "t2", "--k-to", "15"]).1);
    assert_eq!(a, b);
}

#[test]
fn empty_k_range_gives_empty_report() {
    let (code, out, _) = compass(&[
        "--format", "json", "table", "t1", "--k-from", "10", "--k-to", "5",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim(), "[]");
}

#[test]
fn oracle_check_passes_and_detects_corruption() {
    let (code, out, _) = compass(&["--seed", "1", "oracle-check", "--cases", "20"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("20 cases") && out.contains("0 mismatches"));
    assert_eq!(compass(&["oracle-check", "--cases", "0"]).0, EXIT_OK);
    let (code, _, err) = compass(&[
        "--seed",
        "7",
        "oracle-check",
        "--cases",
        "40",
        "--corrupt-blocking",
    ]);
    assert_eq!(code, EXIT_MISMATCH);
    let model: Value = serde_json::from_str(err.lines().nth(1).unwrap()).unwrap();
    assert!(model["case"]["lts"].is_object());
}

#[test]
fn usage_and_input_errors() {
    assert_eq!(compass(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(compass(&["plan"]).0, EXIT_USAGE);
    assert_eq!(compass(&["table", "t1", "--k-step", "0"]).0, EXIT_USAGE);
    let (code, _, err) = compass(&["run", "/nonexistent/x.scn"]);
    assert_eq!(code, EXIT_PIPELINE);
    assert!(err.contains("/nonexistent/x.scn"));
    assert_eq!(compass(&["--help"]).0, EXIT_OK);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_compass");
    let status = Command::new(bin).args(["compile"]).output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_OK));
    let status = Command::new(bin).args(["--bogus"]).output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let status = Command::new(bin)
        .args([
            "oracle-check",
            "--cases",
            "40",
            "--seed",
            "7",
            "--corrupt-blocking",
        ])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(EXIT_MISMATCH));
}
