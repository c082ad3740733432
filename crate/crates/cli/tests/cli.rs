// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cuttlefish"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/scenarios")
        .join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value<'a>(out: &'a str, key: &str) -> Option<&'a str> {
    out.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn path(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn swap_deadlock_exits_zero_with_unlock_completed() {
    let o = run(&["--scenario", path(&scenario("swap-deadlock"))]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert!(
        value(&out, "unlocks_finalized")
            .unwrap()
            .parse::<usize>()
            .unwrap()
            >= 1
    );
    assert_eq!(value(&out, "quiescent"), Some("true"));
    assert!(out
        .lines()
        .filter(|l| l.starts_with("check."))
        .all(|l| l.ends_with("=ok")));
}

#[test]
fn summary_lists_every_checker_once() {
    let out = stdout(&run(&["--scenario", path(&scenario("transfer"))]));
    let checks: Vec<&str> = out.lines().filter(|l| l.starts_with("check.")).collect();
    assert_eq!(checks.len(), cuttlefish::sim::CHECKERS.len());
    assert_eq!(value(&out, "fast_path_round_trips"), Some("2"));
}

#[test]
fn too_many_byzantine_entries_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("transfer")).unwrap();
    let extra = "\n[[faults]]\nvalidator = 0\nbehavior = \"equivocator\"\n\n[[faults]]\nvalidator = 1\nbehavior = \"equivocator\"\n";
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, text + extra).unwrap();
    let o = run(&["--scenario", path(&file)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn unparsable_scenario_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.toml");
    std::fs::write(&file, "n = \"four\"").unwrap();
    assert_eq!(run(&["--scenario", path(&file)]).status.code(), Some(2));
    assert_eq!(
        run(&["--scenario", path(&dir.path().join("missing.toml"))])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn same_seed_gives_byte_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let o = run(&[
            "--scenario",
            path(&scenario("lossy-byzantine")),
            "--seed",
            "7",
            "--trace-out",
            path(out),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_flag_changes_the_run() {
    let seeded = |s: &str| {
        stdout(&run(&[
            "--scenario",
            path(&scenario("lossy-byzantine")),
            "--seed",
            s,
        ]))
    };
    assert_eq!(value(&seeded("7"), "seed"), Some("7"));
    assert_eq!(value(&seeded("8"), "seed"), Some("8"));
}

#[test]
fn explore_honest_and_equivocator_exit_zero() {
    for name in ["swap-deadlock", "lossy-byzantine"] {
        let o = run(&["--scenario", path(&scenario(name)), "--explore", "100"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
        let out = stdout(&o);
        assert_eq!(value(&out, "runs"), Some("100"));
        assert_eq!(value(&out, "violating_seed"), Some("none"));
    }
    let text = std::fs::read_to_string(scenario("lossy-byzantine")).unwrap();
    assert!(text.contains("equivocator"));
}

#[test]
fn explore_one_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (
        dir.path().join("run.jsonl"),
        dir.path().join("explore.jsonl"),
    );
    let s = scenario("double-send");
    let single = run(&[
        "--scenario",
        path(&s),
        "--seed",
        "11",
        "--trace-out",
        path(&a),
    ]);
    let explored = run(&[
        "--scenario",
        path(&s),
        "--seed",
        "11",
        "--explore",
        "1",
        "--trace-out",
        path(&b),
    ]);
    assert_eq!(single.status.code(), explored.status.code());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn explore_zero_is_rejected() {
    assert_eq!(
        run(&["--scenario", path(&scenario("transfer")), "--explore", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn check_only_rechecks_a_recorded_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = run(&[
        "--scenario",
        path(&scenario("gas-noop")),
        "--trace-out",
        path(&trace),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let checked = run(&["--check-only", path(&trace)]);
    assert_eq!(checked.status.code(), Some(0));
    assert_eq!(stdout(&o), stdout(&checked));
}

#[test]
fn check_only_flags_a_tampered_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    run(&[
        "--scenario",
        path(&scenario("transfer")),
        "--trace-out",
        path(&trace),
    ]);
    let text = std::fs::read_to_string(&trace).unwrap();
    // Roll v0's final state back to genesis versions.
    let tampered: String = text
        .lines()
        .map(|l| {
            if l.contains("\"kind\":\"final\"") && l.contains("\"validator\":0,") {
                l.replace("\"version\":1", "\"version\":0")
            } else {
                l.to_string()
            }
        })
        .map(|l| format!("{l}\n"))
        .collect();
    assert_ne!(tampered, text);
    std::fs::write(&trace, tampered).unwrap();
    let o = run(&["--check-only", path(&trace)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("violated("));
}

#[test]
fn check_only_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    std::fs::write(&trace, "not json\n").unwrap();
    assert_eq!(run(&["--check-only", path(&trace)]).status.code(), Some(2));
}
