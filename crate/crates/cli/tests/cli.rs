use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pob-sim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["analyze", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "thresholds", "--k", "0.5"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "thresholds", "--ymax", "x", "--k", "0.5", "--n", "10"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "ruin", "--ybar", "0.1", "--ico-flips", "10", "--trials", "10"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--scenario", "no_such_thing", "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn infeasible_threshold_exits_two() {
    let o = run(&["analyze", "thresholds", "--ymax", "0.5", "--k", "0.5", "--n", "100"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn thresholds_csv_carries_config() {
    let o = run(&["analyze", "thresholds", "--ymax", "0.2", "--k", "0.5", "--n", "4e9"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("# config: {") && l.contains("\"ymax\":0.2")));
    assert!(text.contains("0.2,0.5,4000000000,0.4,true,1600000001"));
}

#[test]
fn json_output_parses() {
    let o = run(&["analyze", "capital", "--total", "80e12", "--ico", "4e9", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["tables"]["offering"][0]["fraction"], 0.00025);
    assert_eq!(v["config"]["total"], 80e12);
}

#[test]
fn estimate_cost_errors() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("s.csv");
    std::fs::write(&series, "slot,price,volume\n1,2,10\n2,1,5\n").unwrap();
    let s = series.to_str().unwrap();
    let ok = run(&["estimate-cost", "--threshold", "8", "--series", s]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("8,11,2,3,7"));
    assert_eq!(run(&["estimate-cost", "--threshold", "100", "--series", s]).status.code(), Some(2));
    let empty = dir.path().join("e.csv");
    std::fs::write(&empty, "slot,price,volume\n").unwrap();
    assert_eq!(run(&["estimate-cost", "--threshold", "1", "--series", empty.to_str().unwrap()]).status.code(), Some(1));
    let junk = dir.path().join("j.csv");
    std::fs::write(&junk, "slot,price,volume\n1,abc,3\n").unwrap();
    assert_eq!(run(&["estimate-cost", "--threshold", "1", "--series", junk.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn simulate_writes_protocol_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--scenario", "krnc_dishonest", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["messages.jsonl", "settlement.jsonl", "state.json", "simulate_invariants.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("messages.jsonl")).unwrap();
    assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert!(log.contains("\"DIS\""));
}

#[test]
fn corrupt_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.json");
    std::fs::write(&f, "{\"name\": \"x\", \"kind\": \"sybil\"").unwrap();
    assert_eq!(run(&["simulate", "--scenario", f.to_str().unwrap(), "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn scenario_file_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ruin.json");
    std::fs::write(
        &f,
        r#"{"name":"r","kind":"ruin","k":0.5,"ruin":{"ico_flips":20,"y_bar":0.3,"trials":1000},"adversary":{"reorder_budget":2}}"#,
    )
    .unwrap();
    let o = run(&["simulate", "--scenario", f.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("# table: ruin"));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["simulate", "--scenario", "tezos156", "--seed", "9", "--format", "json"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
    let r = ["analyze", "ruin", "--ybar", "0.3", "--ico-flips", "20", "--budget", "2", "--trials", "4000", "--seed", "8"];
    assert_eq!(run(&r).stdout, run(&r).stdout);
}
