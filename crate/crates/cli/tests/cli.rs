use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn pagespray(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pagespray")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = pagespray(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_bundled_idle_scenario_is_certain() {
    let r = ok_json(&["run", path(&repo("scenarios/df_idle.json"))]);
    assert_eq!(r["rate"], 1.0);
    assert_eq!(r["trials"], 1000);
    assert_eq!(r["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["seed"], 0);
    assert_eq!(r["scenario_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn trials_seed_and_mitigation_overrides_apply() {
    let s = repo("scenarios/df_idle.json");
    let r = ok_json(&["run", path(&s), "--trials", "10", "--seed", "77", "--mitigation", "gfp"]);
    assert_eq!(r["trials"], 10);
    assert_eq!(r["seed"], 77);
    assert_eq!(r["mitigation"], "gfp_isolation");
    assert_eq!(r["rate"], 0.0);
    assert_eq!(r["overlap_count"], 0);
}

#[test]
fn missing_or_malformed_input_exits_two() {
    assert_eq!(pagespray(&["run", "no/such/file.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"vuln_kind":"double_free"}"#).unwrap();
    assert_eq!(pagespray(&["run", path(&bad)]).status.code(), Some(2));
    std::fs::write(&bad, r#"{"functions":[{"id":1,"name":"a"},{"id":1,"name":"b"}]}"#).unwrap();
    assert_eq!(pagespray(&["analyze", path(&bad)]).status.code(), Some(2));
    let s = repo("scenarios/df_idle.json");
    assert_eq!(pagespray(&["run", path(&s), "--mitigation", "dma"]).status.code(), Some(2));
    assert_eq!(pagespray(&["run", path(&s), "--trials", "0"]).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let s = repo("scenarios/uaf_busy_rcu.json");
    let a = pagespray(&["run", path(&s), "--trials", "200"]);
    let b = pagespray(&["run", path(&s), "--trials", "200"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = repo("corpus/callsite_corpus.json");
    assert_eq!(pagespray(&["analyze", path(&c)]).stdout, pagespray(&["analyze", path(&c)]).stdout);
}

#[test]
fn out_flag_writes_file_and_csv_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let s = repo("scenarios/df_idle.json");
    let o = pagespray(&["run", path(&s), "--trials", "20", "--out", path(&out)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["trials"], 20);
    let summary = String::from_utf8(o.stderr).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("df_idle,page_spray,idle,none,0,20,20,1.0000,"));
    let csv = pagespray(&["run", path(&s), "--trials", "20", "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("scenario,strategy,noise,mitigation,seed,trials"));
}

#[test]
fn compare_matrix_orders_strategies() {
    let s = repo("scenarios/df_busy_rcu.json");
    let r = ok_json(&["compare", path(&s), "--trials", "300"]);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["noise"], "idle");
    for k in ["single_thread", "multi_process", "page_spray"] {
        assert_eq!(rows[0][k], 1.0);
    }
    let busy = &rows[1];
    assert!(busy["page_spray"].as_f64().unwrap() >= busy["single_thread"].as_f64().unwrap());
    assert_eq!(r["campaigns"].as_array().unwrap().len(), 6);
    let again = ok_json(&["compare", path(&s), "--trials", "300"]);
    assert_eq!(r, again);
}

#[test]
fn analyze_bundled_corpora() {
    let r = ok_json(&["analyze", path(&repo("corpus/callsite_corpus.json"))]);
    assert_eq!(r["candidates"].as_array().unwrap().len(), 21);
    assert_eq!(r["input_digest"].as_str().unwrap().len(), 64);
    let d = ok_json(&["analyze", path(&repo("corpus/distractors.json")), "--roots", path(&repo("corpus/roots.json"))]);
    assert_eq!(d["candidates"].as_array().unwrap().len(), 0);
    let csv = pagespray(&["analyze", path(&repo("corpus/callsite_corpus.json")), "--format", "csv"]);
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().count(), 22);
}

#[test]
fn audit_event_log_matches_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.jsonl");
    let report = dir.path().join("report.json");
    let s = repo("scenarios/df_busy_rcu.json");
    let o = pagespray(&["run", path(&s), "--trials", "40", "--events", path(&events), "--out", path(&report)]);
    assert!(o.status.success());
    let campaign: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let audit = ok_json(&["audit", path(&events)]);
    assert_eq!(audit["source"], "event_log");
    assert_eq!(audit["overlap_count"], campaign["overlap_count"]);
    assert_eq!(audit["overlap_count"], audit["logged_overlaps"]);

    let from_report = ok_json(&["audit", path(&report), "--scenario", path(&s)]);
    assert_eq!(from_report["source"], "campaign_report");
    assert_eq!(from_report["overlap_count"], campaign["overlap_count"]);
    assert_eq!(from_report["seed"], 0);
    assert_eq!(pagespray(&["audit", path(&report)]).status.code(), Some(2));
    let other = repo("scenarios/df_idle.json");
    assert_eq!(pagespray(&["audit", path(&report), "--scenario", path(&other)]).status.code(), Some(2));
}

#[test]
fn audit_of_isolated_campaign_and_empty_log_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.jsonl");
    let s = repo("scenarios/df_idle.json");
    let o = pagespray(&["run", path(&s), "--trials", "50", "--mitigation", "slab-virtual", "--events", path(&events)]);
    assert!(o.status.success());
    assert_eq!(ok_json(&["audit", path(&events)])["overlap_count"], 0);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let a = ok_json(&["audit", path(&empty)]);
    assert_eq!(a["overlap_count"], 0);
    assert_eq!(a["events_scanned"], 0);
}

#[test]
fn every_bundled_scenario_runs() {
    let expected = [
        ("consecutive_df", 0.0),
        ("cred_overwrite", 1.0),
        ("cross_cache", 1.0),
        ("df_idle", 1.0),
        ("remap_leak", 1.0),
    ];
    for (name, rate) in expected {
        let s = repo(&format!("scenarios/{name}.json"));
        let r = ok_json(&["run", path(&s), "--trials", "25"]);
        assert_eq!(r["rate"], rate, "{name}");
    }
    for name in ["df_busy_rcu", "uaf_busy_rcu"] {
        let s = repo(&format!("scenarios/{name}.json"));
        assert!(ok_json(&["run", path(&s), "--trials", "25"])["rate"].as_f64().unwrap() > 0.9);
    }
    let r = ok_json(&["run", path(&repo("scenarios/consecutive_df.json")), "--trials", "5"]);
    assert_eq!(r["failures"]["detected_double_free"], 5);
}
