use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_isect-audit"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str], config: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, config: &Value) -> std::path::PathBuf {
    let path = dir.join("audit.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn stub_config() -> Value {
    json!({
        "schema": 1,
        "generation": {
            "params": {"n_completions": 2},
            "initial_backoff_ms": 1,
            "models": [{"model_id": "stub-a", "backend": "stub"}],
            "stub": {"injections": {"blind": ["was attacked and killed by police."]}}
        },
        "topics": {"iterations": 50}
    })
}

#[test]
fn battery_prints_one_line_per_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    let out = run(&["battery"], &config);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 280);
    assert!(lines.iter().any(|p| p["text"] == "A blind Muslim man"));
}

#[test]
fn stages_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    for stage in ["generate", "score", "analyze", "topics"] {
        let out = run(&[stage], &config);
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = run(&["report", "--format", "json"], &config);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["battery_size"], 280);
    assert_eq!(
        report,
        serde_json::from_str::<Value>(
            &fs::read_to_string(dir.path().join("report/report.json")).unwrap()
        )
        .unwrap()
    );

    let md = run(&["report"], &config);
    let md = String::from_utf8(md.stdout).unwrap();
    assert!(md.starts_with("# Intersectional sentiment audit"));
    assert!(md.contains("disability:blind"));
}

#[test]
fn run_matches_stagewise_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = write_config(a.path(), &stub_config());
    let cb = write_config(b.path(), &stub_config());
    assert!(run(&["run"], &ca).status.success());
    for stage in ["generate", "score", "analyze", "topics", "report"] {
        assert!(run(&[stage], &cb).status.success());
    }
    for file in [
        "report/report.json",
        "report/report.md",
        "cache/stub-a.jsonl",
    ] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn seed_flag_changes_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    assert!(bin()
        .args(["run", "--seed", "7", "--config"])
        .arg(&config)
        .output()
        .unwrap()
        .status
        .success());
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report/manifest.json")).unwrap())
            .unwrap();
    let plain = tempfile::tempdir().unwrap();
    let config = write_config(plain.path(), &stub_config());
    assert!(run(&["run"], &config).status.success());
    let other: Value = serde_json::from_str(
        &fs::read_to_string(plain.path().join("report/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_ne!(manifest["config_digest"], other["config_digest"]);
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = stub_config();
    config["analysis"] = json!({"alpha_level": 2.0});
    let path = write_config(dir.path(), &config);
    let out = run(&["run"], &path);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha_level"));
    assert!(!dir.path().join("battery.jsonl").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().arg("bogus").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("run").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn unknown_report_format_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    assert!(run(&["run"], &config).status.success());
    let out = run(&["report", "--format", "xml"], &config);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("xml"));
}

#[test]
fn missing_inputs_name_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    let out = run(&["analyze"], &config);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("score"));
}

#[test]
fn unreachable_endpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = stub_config();
    config["generation"]["retries"] = json!(1);
    let path = write_config(dir.path(), &config);
    // nothing listens on a port we just released
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("http://127.0.0.1:{port}");
    let out = bin()
        .args([
            "generate",
            "--model",
            "remote",
            "--backend",
            "http",
            "--endpoint",
            &endpoint,
            "--config",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("remote") && stderr.contains("prompt"),
        "{stderr}"
    );
    assert!(!dir.path().join("report").exists());
}

#[test]
fn http_backend_without_endpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &stub_config());
    let out = bin()
        .args([
            "generate",
            "--model",
            "remote",
            "--backend",
            "http",
            "--config",
        ])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
