mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture_dir;

fn injsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_injsim")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_audit_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, metrics, series) = (dir.path().join("t.trace"), dir.path().join("m.csv"), dir.path().join("s.csv"));
    let scenario = fixture_dir().join("learning-groups.json");
    let out = injsim(&[
        "run", "--scenario", s(&scenario), "--trace", s(&trace), "--metrics", s(&metrics), "--series", s(&series),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&series).unwrap().lines().count() > 1);

    let out = injsim(&["audit", "--trace", s(&trace), "--metrics", s(&metrics)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture_dir().join("partition-stress.json");
    let mut traces = Vec::new();
    for i in 0..2 {
        let (t, m) = (dir.path().join(format!("{i}.trace")), dir.path().join(format!("{i}.csv")));
        let out = injsim(&["run", "--scenario", s(&scenario), "--seed", "11", "--trace", s(&t), "--metrics", s(&m), "--no-baselines"]);
        assert!(out.status.success());
        traces.push((fs::read(&t).unwrap(), fs::read(&m).unwrap()));
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn bad_scenario_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "name": "x", "duration": -1 }"#).unwrap();
    let t = dir.path().join("t");
    let out = injsim(&["run", "--scenario", s(&bad), "--trace", s(&t), "--metrics", s(&t)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!t.exists());

    let out = injsim(&["run", "--scenario", s(&dir.path().join("missing.json")), "--trace", s(&t), "--metrics", s(&t)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tampered_trace_fails_audit_with_two() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    for name in ["deleted-record", "privacy-leak"] {
        let out = injsim(&[
            "audit",
            "--trace",
            s(&fixtures.join(format!("{name}.trace"))),
            "--metrics",
            s(&fixtures.join(format!("{name}.csv"))),
        ]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"), "{name}");
    }
}

#[test]
fn batch_collects_one_row_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("all.csv");
    let out = injsim(&["batch", "--dir", s(&fixture_dir()), "--out", s(&out_path), "--jobs", "2", "--no-baselines"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(&out_path).unwrap();
    assert_eq!(table.lines().count(), 1 + common::SUITE.len());
    let width = table.lines().next().unwrap().split(',').count();
    assert!(table.lines().all(|l| l.split(',').count() == width));
}

#[test]
fn batch_over_missing_directory_is_a_scenario_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = injsim(&["batch", "--dir", s(&dir.path().join("nope"))]);
    assert_eq!(out.status.code(), Some(1));
}
