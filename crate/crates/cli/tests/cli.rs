use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn l2sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2sim")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

fn simulate(name: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--scenario"];
    let path = scenario(name);
    args.push(&path);
    let out = out.display().to_string();
    args.extend(["--out", &out]);
    args.extend(extra);
    l2sim(&args)
}

fn events(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("events.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn calc_json_is_exact() {
    let out = l2sim(&["calc", "l1-tps", "--preset", "bitcoin-2021", "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tx_per_block"]["numerator"], "262144");
    assert_eq!(v["tx_per_block"]["denominator"], "95");
    assert_eq!(v["tps"]["decimal"], "4.59902");
}

#[test]
fn calc_prints_six_significant_digits() {
    let out = l2sim(&["calc", "rollup-tps", "--mode", "optimistic"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("tps: 834.669"), "{text}");
}

#[test]
fn calc_usage_errors_exit_2() {
    assert_eq!(l2sim(&["calc", "rollup-tps"]).status.code(), Some(2));
    assert_eq!(l2sim(&["calc", "fee"]).status.code(), Some(2));
    assert_eq!(l2sim(&["calc", "fee", "--backend", "carrier-pigeon"]).status.code(), Some(2));
    assert_eq!(l2sim(&["calc", "l1-tps", "--preset", "dogecoin"]).status.code(), Some(2));
    assert_eq!(l2sim(&[]).status.code(), Some(2));
}

#[test]
fn routing_scenario_replays_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate("routing.json", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(dir.path());
    assert_eq!(s["steps"][0]["ok"], true);
    assert_eq!(s["steps"][1]["ok"], false);
    let ch = &s["final"]["channels"];
    assert_eq!((ch[0]["balance_a"].as_u64(), ch[0]["balance_b"].as_u64()), (Some(3), Some(4)));
    assert_eq!((ch[1]["balance_a"].as_u64(), ch[1]["balance_b"].as_u64()), (Some(1), Some(3)));
}

#[test]
fn ln_cheat_scenario_logs_penalty() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate("ln_cheat.json", dir.path(), &[]).status.code(), Some(0));
    let ev = events(dir.path());
    let penalty = ev.iter().find(|e| e["kind"] == "monitor_penalty").expect("penalty event");
    assert_eq!(penalty["data"]["cheater"], "alice");
    let payouts = &summary(dir.path())["final"]["channels"][0]["payouts"];
    assert!(payouts.get("alice").is_none());
    assert_eq!(payouts["bob"].as_u64().unwrap() + payouts["tower"].as_u64().unwrap(), 100_000);
}

#[test]
fn plasma_withholding_has_mass_exit_transcript() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate("plasma_withhold.json", dir.path(), &[]).status.code(), Some(0));
    let kinds: Vec<String> = events(dir.path()).iter().map(|e| e["kind"].as_str().unwrap().to_string()).collect();
    let started = kinds.iter().position(|k| k == "meit_started").expect("mass exit started");
    let done = kinds.iter().position(|k| k == "meit_finalized").expect("mass exit finalized");
    assert!(started < done);
    let s = summary(dir.path());
    assert_eq!(s["invariants"], "ok");
    assert_eq!(s["final"]["halted"], true);
}

#[test]
fn rollup_fraud_scenario_writes_batch_ledger() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate("rollup_fraud.json", dir.path(), &[]).status.code(), Some(0));
    let ledger: Vec<Value> = fs::read_to_string(dir.path().join("batches.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(ledger.iter().any(|b| b["status"] == "reverted"));
    assert!(ledger.iter().filter(|b| b["status"] != "reverted").all(|b| b["status"] == "finalized"));
    let s = summary(dir.path());
    assert_eq!(s["final"]["head_root"], s["final"]["finalized_root"]);
    assert!(events(dir.path()).iter().any(|e| e["kind"] == "fraud_proven"));
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();
    for body in [
        "{\"backend\": ",
        r#"{"backend": "channels", "channels": {"nodes": [], "extra": 1}}"#,
        r#"{"backend": "plasma", "channels": {"nodes": []}}"#,
        r#"{"backend": "rollup", "rollup": {"mode": "zk", "users": [], "script": [{"action": "teleport"}]}}"#,
        r#"{"backend": "channels", "chain": "dogecoin", "channels": {"nodes": []}}"#,
        r#"{"backend": "channels", "channels": {"nodes": [{"id": "a"}], "channels": [{"a": "a", "b": "z", "fund_a": 1, "fund_b": 1}]}}"#,
        r#"{"backend": "plasma", "plasma": {"users": [{"id": "a", "l1_funds": "3 doge"}]}}"#,
    ] {
        let p = write_scenario(dir.path(), body);
        let res = l2sim(&["simulate", "--scenario", p.to_str().unwrap(), "--out", &out]);
        assert_eq!(res.status.code(), Some(2), "{body}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn inline_chain_params_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
        "backend": "channels",
        "chain": { "block_size_bytes": 4000, "block_interval_s": "60", "relay_time_s": "2",
                   "avg_tx_size_bytes": 250, "gas_limit_per_block": 4000, "gas_per_byte": 1 },
        "channels": { "nodes": [{ "id": "a", "l1_funds": 100000 }, { "id": "b", "l1_funds": 100000 }],
                      "channels": [{ "a": "a", "b": "b", "fund_a": 10, "fund_b": 0 }] }
    }"#;
    let p = write_scenario(dir.path(), body);
    let out = dir.path().join("out");
    let res = l2sim(&["simulate", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn simulations_are_byte_identical_and_seed_overrides() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for name in ["ln_cheat.json", "plasma_withhold.json", "rollup_fraud.json"] {
        simulate(name, a.path(), &[]);
        simulate(name, b.path(), &[]);
        simulate(name, c.path(), &["--seed", "99"]);
        for f in ["events.jsonl", "summary.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{name} {f}");
        }
        assert_eq!(summary(c.path())["seed"], 99);
        assert_ne!(fs::read(a.path().join("summary.json")).unwrap(), fs::read(c.path().join("summary.json")).unwrap());
    }
}

#[test]
fn bench_writes_reports_and_report_rebuilds_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let path = scenario("bench_small.json");
    let res = l2sim(&["bench", "--scenario", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert_eq!(md.lines().count(), 2 + 3);
    for f in ["report.csv", "events.jsonl", "results.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let again = dir.path().join("again");
    let res = l2sim(&["report", out.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    for f in ["report.md", "report.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn default_bench_covers_every_backend() {
    let dir = tempfile::tempdir().unwrap();
    let res = l2sim(&["bench", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["channels", "plasma", "rollup-zk", "rollup-optimistic", "l1-direct"]);
}

#[test]
fn report_over_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(l2sim(&["report", dir.path().to_str().unwrap()]).status.code(), Some(2));
    fs::write(dir.path().join("results.json"), "[]").unwrap();
    assert_eq!(l2sim(&["report", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bench_rejects_non_bench_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("routing.json");
    let res = l2sim(&["bench", "--scenario", &path, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}
