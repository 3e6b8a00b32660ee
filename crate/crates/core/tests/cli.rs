use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/append_32gib.sls");
const GOLDEN: &str = include_str!("fixtures/append_32gib.report");

fn spaceaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spaceaudit")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn report_on_stdout() {
    let out = spaceaudit(&["run", FIXTURE]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), GOLDEN);
}

#[test]
fn report_and_ledger_files_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for i in 0..2 {
        let report = dir.path().join(format!("r{i}.txt"));
        let ledger = dir.path().join(format!("l{i}.txt"));
        let out = spaceaudit(&["run", FIXTURE, "--report", report.to_str().unwrap(), "--ledger", ledger.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        seen.push((fs::read_to_string(report).unwrap(), fs::read_to_string(ledger).unwrap()));
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0].0, GOLDEN);
    let ledger = spaceaudit::ClientLedger::load(&seen[0].1).unwrap();
    assert_eq!(ledger.expected_used(spaceaudit::ServerId::new(0)).unwrap(), 1_048_576);
}

#[test]
fn violation_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "v.sls", "fleet 2\nallocate s0 100\nappend s0 a 10\ntamper modify s0 a +5\n");
    let out = spaceaudit(&["run", &f]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout).unwrap().contains("server s0 expected=10 actual=15 verdict=VIOLATION"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(spaceaudit(&["run", "/nonexistent/scenario.sls"]).status.code(), Some(1));
    assert_eq!(spaceaudit(&["run", FIXTURE, "--bogus"]).status.code(), Some(1));
    assert_eq!(spaceaudit(&[]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.sls", "fleet 1\nallocate s0 -5\n");
    let out = spaceaudit(&["run", &f]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains('2'));
}

#[test]
fn recover_without_restore_point_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.sls", "fleet 1\nallocate s0 100\nappend s0 a 10\ncrash s0\nrecover s0\n");
    let out = spaceaudit(&["run", &f, "--no-auto-restore"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ERROR line=5"), "{text}");

    let out = spaceaudit(&["run", &f]);
    assert_eq!(out.status.code(), Some(0));
}
