//! End-to-end tests of the `lightiot` binary: subcommand flows, exit
//! codes, registry/env handling, and report reproducibility.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lightiot"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lightiot-cli-{tag}"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn simulate_reports_six_messages_and_3424_bits() {
    let out = run(&[
        "simulate",
        "--clients",
        "1",
        "--gateways",
        "1",
        "--sessions",
        "1",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("total 6 frames, 3424 bits (1088 client-originated)"));
}

#[test]
fn simulate_without_seed_is_a_usage_error() {
    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stale_replay_attack_reports_stale_timestamp() {
    let out = run(&[
        "attack",
        "--scenario",
        "replay",
        "--message",
        "M1",
        "--staleness",
        "5000",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("verdict rejected:StaleTimestamp"));
}

#[test]
fn within_window_replay_is_reported_not_failed() {
    let out = run(&[
        "attack",
        "--scenario",
        "replay",
        "--message",
        "M1",
        "--staleness",
        "100",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("verdict accepted"));
    assert!(text.contains("within-window-replay-accepted"));
}

#[test]
fn tamper_and_block_attacks_pass_their_checks() {
    for args in [
        vec![
            "attack",
            "--scenario",
            "tamper",
            "--message",
            "M5",
            "--bit",
            "300",
            "--seed",
            "3",
        ],
        vec![
            "attack",
            "--scenario",
            "block",
            "--message",
            "M5",
            "--seed",
            "3",
        ],
        vec![
            "attack",
            "--scenario",
            "block",
            "--message",
            "M2",
            "--seed",
            "3",
        ],
        vec![
            "attack",
            "--scenario",
            "trace",
            "--sessions",
            "30",
            "--seed",
            "3",
        ],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stdout(&out));
    }
}

#[test]
fn tamper_with_out_of_range_bit_is_a_config_error() {
    let out = run(&[
        "attack",
        "--scenario",
        "tamper",
        "--message",
        "M2",
        "--bit",
        "288",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn provision_then_simulate_via_registry_flag_and_env() {
    let dir = tmpdir("registry");
    let reg = dir.join("registry.jsonl");
    let out = run(&[
        "provision",
        "--clients",
        "2",
        "--gateways",
        "1",
        "--seed",
        "11",
        "--out",
        reg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let lines = std::fs::read_to_string(&reg).unwrap();
    assert_eq!(lines.lines().count(), 3);

    let out = run(&[
        "simulate",
        "--seed",
        "11",
        "--sessions",
        "2",
        "--registry",
        reg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    // 2 clients: 2 pairings + 2 sessions x 2 clients x 4 frames.
    assert!(stdout(&out).contains("sessions: 6 total, 6 completed"));

    // Same flow through the environment variable default.
    let out = bin()
        .args(["pair", "--seed", "11"])
        .env("LIGHTIOT_REGISTRY", reg.to_str().unwrap())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("2 pairing, 0 auth completed"));
}

#[test]
fn missing_registry_file_is_a_config_error() {
    let out = run(&[
        "auth",
        "--seed",
        "5",
        "--registry",
        "/nonexistent/registry.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_invocations_produce_byte_identical_json_reports() {
    let dir = tmpdir("determinism");
    let a = dir.join("a.json");
    let b = dir.join("b.json");
    for path in [&a, &b] {
        let out = run(&[
            "simulate",
            "--seed",
            "42",
            "--sessions",
            "3",
            "--cg-delay-ms",
            "20",
            "--gs-delay-ms",
            "30",
            "--cs-delay-ms",
            "25",
            "--json-out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn transcript_round_trips_through_the_report_subcommand() {
    let dir = tmpdir("report");
    let transcript = dir.join("run.jsonl");
    let json1 = dir.join("direct.json");
    let out = run(&[
        "simulate",
        "--seed",
        "13",
        "--sessions",
        "2",
        "--transcript-out",
        transcript.to_str().unwrap(),
        "--json-out",
        json1.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(&[
        "report",
        "--transcript",
        transcript.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let direct = std::fs::read_to_string(&json1).unwrap();
    let rebuilt = stdout(&out);
    assert_eq!(rebuilt.trim_end(), direct.trim_end());
}

#[test]
fn config_file_applies_under_explicit_flags() {
    let dir = tmpdir("config");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "sessions=4\ncg_delay_ms=15\n# comment\n").unwrap();
    let out = run(&["simulate", "--seed", "9", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("sessions: 5 total, 5 completed"));

    // Explicit flag wins over the file.
    let out = run(&[
        "simulate",
        "--seed",
        "9",
        "--sessions",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("sessions: 2 total, 2 completed"));

    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "unknown_key=1\n").unwrap();
    let out = run(&["simulate", "--seed", "9", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn adversary_script_file_drives_the_simulation() {
    let dir = tmpdir("script");
    let script = dir.join("drop_m5.json");
    std::fs::write(
        &script,
        r#"[{"session": 1, "message": "M5", "action": "drop"}]"#,
    )
    .unwrap();
    let out = run(&[
        "simulate",
        "--seed",
        "21",
        "--sessions",
        "2",
        "--adversary",
        script.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("1 failed"), "one session blocked: {text}");
}

#[test]
fn total_loss_fails_the_honest_run_check() {
    let out = run(&["simulate", "--seed", "2", "--cs-loss", "1"]);
    assert_eq!(out.status.code(), Some(1), "honest run cannot complete");
}
