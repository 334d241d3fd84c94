use std::path::Path;
use std::process::{Command, Output};

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trome-lab"))
        .current_dir(dir)
        .env_remove("TROME_LAB_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_writes_summary_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(
        dir.path(),
        &["simulate", "--protocol", "trome", "--nodes", "4", "--packets", "5", "--payload", "100", "--p", "1", "--q", "1", "--seed", "7", "--traces"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir.path().join("out/run-simulate.csv"));
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let delivery: f64 = row[11].parse().unwrap();
    assert!((81_000.0..=99_000.0).contains(&delivery), "{delivery}");
    let trace = read(&dir.path().join("out/traces/run-trome-m4-n5-seed7.jsonl"));
    assert!(trace.lines().count() > 10);
    for line in trace.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn out_dir_from_env_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trome-lab"))
        .current_dir(dir.path())
        .env("TROME_LAB_OUT", "from-env")
        .args(["analyze", "--nodes", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/run-analyze.csv").exists());

    let out = lab(dir.path(), &["analyze", "--nodes", "2", "--out", "from-flag", "--name", "x"]);
    assert!(out.status.success());
    assert!(dir.path().join("from-flag/x-analyze.jsonl").exists());
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "name = \"cfg\"\nnodes = [3]\nprotocols = [\"naive\"]\noutput_dir = \"results\"\n").unwrap();
    let out = lab(dir.path(), &["analyze", "--config", "s.toml", "--nodes", "5", "--protocol", "trome", "--name", "flag"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir.path().join("results/cfg-analyze.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("naive,3,"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "speed = 3\n").unwrap();
    for args in [
        &["analyze", "--p", "1.5"][..],
        &["analyze", "--protocol", "aloha"],
        &["analyze", "--nodes", "6-2"],
        &["budget", "--payload", "300"],
        &["analyze", "--config", "bad.toml"],
        &["analyze", "--config", "missing.toml"],
        &["launch"],
    ] {
        let out = lab(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("overhead"));
}

#[test]
fn verify_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // Too few seeds for the Monte-Carlo check to reach its 1% bound.
    let out = lab(dir.path(), &["verify", "--mc-runs", "1", "--safety-cases", "20"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read(&dir.path().join("out/verify.csv"));
    assert_eq!(report.lines().count(), 10);
    assert!(report.contains("\n4,") && report.contains(",false\n"));
}
