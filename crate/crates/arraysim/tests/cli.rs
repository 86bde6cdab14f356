//! End-to-end checks of the command line front end, driving the built
//! binary the way a user would.

use std::fs;
use std::process::Command;

use arraysim::harness::demo_scenario;
use arraysim::monitor_stream::ARCHIVE_HEADER;
use arraysim::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arraysim"))
}

#[test]
fn run_executes_a_scenario_file_and_leaves_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario_path = dir.path().join("scenario.json");
    let text = serde_json::to_string_pretty(&demo_scenario()).unwrap();
    fs::write(&scenario_path, text).unwrap();
    let out = dir.path().join("out");

    let res = bin()
        .args(["run", "--config"])
        .arg(&scenario_path)
        .args(["--duration", "15", "--seed", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        res.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("312 events"), "stdout: {stdout}");

    let archive = fs::read_to_string(out.join("archive.csv")).unwrap();
    assert_eq!(archive.lines().next().unwrap(), ARCHIVE_HEADER);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["events"], 312);
    assert_eq!(report["timing_violations"], 0);
    assert_eq!(report["commands_rejected_late"], 1);
    assert_eq!(report["alarms_raised"], 1);
    assert_eq!(report["alarms_cleared"], 1);

    // The emitted configuration is itself a loadable run input.
    let emitted = fs::read_to_string(out.join("config.json")).unwrap();
    Scenario::parse(&emitted).unwrap();
}

#[test]
fn run_accepts_a_bare_device_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("topology.json");
    let registry = arraysim::Registry::from_doc(arraysim::default_topology()).unwrap();
    fs::write(&cfg_path, registry.emit()).unwrap();
    let out = dir.path().join("out");

    let res = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--duration", "1", "--seed", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        res.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    // Twenty periods of the every-event cryostat monitors alone fill rows.
    let archive = fs::read_to_string(out.join("archive.csv")).unwrap();
    assert!(archive.lines().count() > 20);
}

#[test]
fn run_refuses_a_missing_config() {
    let dir = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.json"))
        .args(["--duration", "1", "--seed", "1", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
}

#[test]
fn check_orthogonality_reports_exact_separation() {
    let res = bin()
        .args(["check-orthogonality", "--antennas", "63"])
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("all demodulate exactly"));

    // 64 distinct indexes do not exist in a 63-function family.
    let res = bin()
        .args(["check-orthogonality", "--antennas", "64"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn throughput_prints_the_frame_model() {
    let res = bin().args(["throughput", "--dlc", "8"]).output().unwrap();
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("131 bits/frame"), "stdout: {stdout}");
    assert!(stdout.contains("3816.793893129771 ops/s"), "stdout: {stdout}");

    let res = bin().args(["throughput", "--dlc", "9"]).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
}
