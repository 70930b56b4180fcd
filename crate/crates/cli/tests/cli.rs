use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use bedwarden_core::env::{ActionIndex, Environment};
use bedwarden_core::hospital::{HospitalConfig, HospitalEnv};
use bedwarden_core::protocol::RemoteEnv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bedwarden"))
}

fn small_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("env.toml");
    std::fs::write(&path, "sim_duration = 10\narrivals_per_day = 20\nlos = 4\n").unwrap();
    path
}

#[test]
fn train_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--agent", "d3qn", "--episodes", "3", "--seed", "7"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for f in [
        "metrics.csv",
        "trace.csv",
        "checkpoint/meta.json",
        "checkpoint/policy_0.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let eval = bin()
        .args(["evaluate", "--episodes", "2", "--checkpoint"])
        .arg(out.join("checkpoint"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(eval.status.success());
}

#[test]
fn bogus_agent_lists_variants() {
    let out = bin().args(["train", "--agent", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for v in [
        "d2qn",
        "d3qn",
        "noisy_d3qn",
        "per_d3qn",
        "bootstrapped_d3qn",
        "combined",
    ] {
        assert!(err.contains(v), "{err}");
    }
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(bin().arg("fly").output().unwrap().status.code(), Some(1));
    assert_eq!(
        bin()
            .args(["print-spec", "--nope"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    let missing = bin()
        .args(["print-spec", "--config", "/definitely/missing.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
}

#[test]
fn print_spec_defaults() {
    let out = bin().arg("print-spec").output().unwrap();
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        r#"{"action_size":9,"observation_size":5,"actions":[-10,-5,-2,-1,0,1,2,5,10]}"#
    );
}

#[test]
fn baseline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = bin()
        .args([
            "baseline",
            "--policy",
            "rule_based",
            "--episodes",
            "2",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("b"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("b/metrics.csv").exists());
    assert_eq!(
        bin()
            .args(["baseline", "--policy", "magic"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
}

/// Drives a served env over stdio and an in-process env with the same seed and
/// actions; streams must agree exactly.
#[test]
fn stdio_session_matches_in_process_env() {
    let mut child = bin()
        .args(["serve-env", "--transport", "stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let stdin = child.stdin.take().unwrap();
    let stdout = BufReader::new(child.stdout.take().unwrap());
    let mut remote = RemoteEnv::handshake(stdout, stdin).unwrap();
    assert_eq!(remote.spec().action_size, 9);

    let mut local = HospitalEnv::new(HospitalConfig::default(), 0).unwrap();
    assert_eq!(remote.reset(Some(42)).unwrap(), local.reset(Some(42)));
    let mut rng = bedwarden_core::des::RngStream::new(1);
    loop {
        let legal: Vec<usize> = (0..9).filter(|&i| local.is_legal(ActionIndex(i))).collect();
        let a = ActionIndex(legal[rng.sample_index(legal.len())]);
        let l = local.step(a).unwrap();
        let r = remote.step(a).unwrap();
        assert_eq!(l.observation, r.observation);
        assert_eq!(l.reward.to_bits(), r.reward.to_bits());
        assert_eq!(l.terminal, r.terminal);
        if l.terminal {
            break;
        }
    }
    assert!(
        remote.step(ActionIndex(4)).is_err(),
        "step after terminal is an error reply"
    );
    assert!(remote.render().unwrap().starts_with("t=365"));
    remote.close().unwrap();
    assert!(child.wait().unwrap().success());
}

#[test]
fn tcp_serves_independent_sessions() {
    let mut child = bin()
        .args(["serve-env", "--transport", "tcp", "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();

    let mut a = RemoteEnv::connect(&addr).unwrap();
    let mut b = RemoteEnv::connect(&addr).unwrap();
    let oa = a.reset(Some(5)).unwrap();
    let ob = b.reset(Some(5)).unwrap();
    assert_eq!(oa, ob);
    let ra = a.step(ActionIndex(8)).unwrap();
    let rb = b.step(ActionIndex(8)).unwrap();
    assert_eq!(ra, rb);
    a.close().unwrap();
    assert!(
        b.step(ActionIndex(4)).is_ok(),
        "closing one session leaves others running"
    );

    let mut raw = std::net::TcpStream::connect(&addr).unwrap();
    writeln!(raw, "{{\"cmd\":\"spec\"}}").unwrap();
    let mut reader = BufReader::new(raw.try_clone().unwrap());
    let mut hello = String::new();
    reader.read_line(&mut hello).unwrap();
    assert_eq!(hello.trim(), r#"{"protocol":"bedwarden-env-1"}"#);
    child.kill().unwrap();
    child.wait().unwrap();
}
