mod common;

use std::fs;

use common::{read, stub_config};
use isect_core::battery::Category;
use isect_core::generation::ModelSpec;
use isect_core::harness::{
    emit_report, run_audit, Audit, AuditConfig, AuditError, ReportFormat, Stage,
};

#[test]
fn stub_run_is_deterministic_and_honest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = stub_config(None);
    let ra = run_audit(&config, a.path()).unwrap();
    let rb = run_audit(&config, b.path()).unwrap();
    assert_eq!(ra, rb);
    for f in ["report/report.json", "report/report.md"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    assert_eq!(
        emit_report(&ra, ReportFormat::Json),
        emit_report(&ra, ReportFormat::Json)
    );

    let audit = Audit::new(config, a.path()).unwrap();
    let manifest = audit.refresh_manifest().unwrap();
    assert_eq!(manifest.config_digest, ra.manifest.config_digest);
    for (model, generated) in &manifest.completions {
        assert_eq!(*generated, 2800);
        assert_eq!(
            manifest.scored[model] + manifest.excluded_for(model),
            *generated
        );
    }
}

#[test]
fn injected_marker_has_most_negative_rollup() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_audit(&stub_config(Some("blind")), dir.path()).unwrap();
    let first = &report.pooled.rollup_findings[0];
    assert_eq!(first.group_key.to_string(), "disability:blind");
    assert!(first.significant);
    assert!(
        report
            .pooled
            .rollup(Category::Disability, "blind")
            .unwrap()
            .delta
            < 0.0
    );
}

#[test]
fn markdown_shape() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_audit(&stub_config(Some("muslim")), dir.path()).unwrap();
    let md = emit_report(&report, ReportFormat::Markdown);
    assert!(md.contains("| person/-/- (baseline) | 20 | "));
    assert!(md.contains(" | 0.0000 | n/a | n/a | n/a |"));
    assert!(md.contains("| religion:muslim | 800 |"));
    assert!(md.contains("### Interaction residuals"));
    assert!(md.contains("- Topic 0: "));
    assert!(!md.contains("No significant group differences"));
    assert_eq!(read(&dir.path().join("report/report.md")), md);
}

#[test]
fn no_significance_is_stated() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = run_audit(&stub_config(None), dir.path()).unwrap();
    for m in std::iter::once(&mut report.pooled).chain(report.models.iter_mut()) {
        for f in m
            .signature_findings
            .iter_mut()
            .chain(m.rollup_findings.iter_mut())
        {
            f.significant = false;
        }
    }
    let md = emit_report(&report, ReportFormat::Markdown);
    assert_eq!(md.matches("No significant group differences").count(), 3);
}

#[test]
fn deleted_stage_outputs_regenerate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = stub_config(Some("muslim"));
    run_audit(&config, dir.path()).unwrap();
    let report = read(&dir.path().join("report/report.json"));
    let findings = read(&dir.path().join("findings/pooled.json"));
    let scores = read(&dir.path().join("scores/stub-a.jsonl"));
    for sub in ["scores", "findings", "topics", "report"] {
        fs::remove_dir_all(dir.path().join(sub)).unwrap();
        run_audit(&config, dir.path()).unwrap();
        assert_eq!(
            read(&dir.path().join("report/report.json")),
            report,
            "after deleting {sub}"
        );
    }
    assert_eq!(read(&dir.path().join("findings/pooled.json")), findings);
    assert_eq!(read(&dir.path().join("scores/stub-a.jsonl")), scores);
}

#[test]
fn stages_require_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let audit = Audit::new(stub_config(None), dir.path()).unwrap();
    let err = audit.score().unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Score));
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("run generate first"));
    assert_eq!(audit.analyze().unwrap_err().stage(), Some(Stage::Analyze));
    assert_eq!(audit.report().unwrap_err().stage(), Some(Stage::Report));
}

#[test]
fn unreachable_endpoint_aborts_at_generate() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let mut config = AuditConfig::default();
    config.generation.models = vec![ModelSpec::http(
        "remote",
        &format!("http://127.0.0.1:{port}"),
    )];
    config.generation.retries = 1;
    config.generation.initial_backoff_ms = 1;
    config.generation.timeout_secs = 2;
    let dir = tempfile::tempdir().unwrap();
    let err = run_audit(&config, dir.path()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Generate));
    assert_eq!(err.exit_code(), 2);
    assert!(err
        .to_string()
        .starts_with("generate stage failed: model `remote`, prompt `"));
}

#[test]
fn invalid_config_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = stub_config(None);
    config.analysis.alpha_level = 0.0;
    let err = run_audit(&config, dir.path()).unwrap_err();
    assert!(matches!(err, AuditError::Config(_)));
    assert_eq!(err.exit_code(), 1);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_report_format() {
    assert!(matches!(
        "pdf".parse::<ReportFormat>(),
        Err(AuditError::UnknownFormat(f)) if f == "pdf"
    ));
    assert_eq!(
        "markdown".parse::<ReportFormat>().unwrap(),
        ReportFormat::Markdown
    );
}

#[test]
fn config_file_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.json");
    fs::write(
        &path,
        r#"{"schema": 1, "generation": {"models": [{"model_id": "s", "backend": "stub"}], "params": {"n_completions": 2}},
            "analysis": {"bootstrap_resamples": 50}, "topics": {"iterations": 20}, "paths": {"report": "out"}}"#,
    )
    .unwrap();
    let audit = Audit::from_path(&path, Some(9)).unwrap();
    assert_eq!(audit.config().topics.seed, 9);
    audit.run().unwrap();
    assert!(dir.path().join("out/report.json").exists());
    assert!(dir.path().join("out/manifest.json").exists());
    assert_eq!(read(&dir.path().join("cache/s.jsonl")).lines().count(), 560);
}
