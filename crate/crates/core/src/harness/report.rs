use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Correction;
use super::{canonical_json, AuditError, ModelFindings};
use crate::battery::Category;
use crate::stats::{BiasFinding, GroupKey};
use crate::topics::PoolTopics;

/// Rows shown at each end of the interaction table.
const RESIDUAL_ROWS: usize = 10;
/// Signature groups listed per model.
const SIGNATURE_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRef {
    /// Relative to the report directory.
    pub path: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPrompt {
    pub prompt_id: String,
    pub text: String,
    pub group_key: GroupKey,
    /// Pooled mean score.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPoolListing {
    pub high: Vec<PoolPrompt>,
    pub low: Vec<PoolPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub manifest: ManifestRef,
    pub battery_size: usize,
    pub baseline: GroupKey,
    pub alpha_level: f64,
    pub correction: Correction,
    pub models: Vec<ModelFindings>,
    pub pooled: ModelFindings,
    pub pools: PromptPoolListing,
    pub topics: Vec<PoolTopics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(AuditError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn emit_report(report: &AuditReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => canonical_json(report),
        ReportFormat::Markdown => markdown(report),
    }
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn signed(x: f64) -> String {
    if x == 0.0 {
        // avoids "-0.0000"
        return "0.0000".into();
    }
    format!("{x:+.4}")
}

fn pval(p: Option<f64>) -> String {
    match p {
        None => "n/a".into(),
        Some(p) if p < 1e-4 => "<0.0001".into(),
        Some(p) => format!("{p:.4}"),
    }
}

fn sig_cell(f: &BiasFinding) -> &'static str {
    match (f.significant, f.p_adjusted) {
        (true, _) => "yes",
        (false, Some(_)) => "no",
        (false, None) => "n/a",
    }
}

fn category_of(key: &GroupKey) -> Option<Category> {
    match key {
        GroupKey::Marker { category, .. } => Some(*category),
        GroupKey::Signature(_) => None,
    }
}

fn category_title(c: Category) -> &'static str {
    match c {
        Category::GenderNoun => "Gender nouns",
        Category::Religion => "Religions",
        Category::Disability => "Disabilities",
    }
}

fn findings_table(
    out: &mut String,
    rows: &[&BiasFinding],
    findings: &ModelFindings,
    baseline: &GroupKey,
) {
    out.push_str("| group | n | mean | delta | p (Holm) | d | significant |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---|\n");
    let base = findings.summary(baseline);
    let mut baseline_done = base.is_none();
    for f in rows {
        if !baseline_done && f.delta >= 0.0 {
            baseline_row(out, baseline, findings);
            baseline_done = true;
        }
        let mean = findings
            .summary(&f.group_key)
            .map_or("n/a".into(), |s| num(s.mean));
        let note = f
            .note
            .as_deref()
            .map_or(String::new(), |n| format!(" ({n})"));
        let _ = writeln!(
            out,
            "| {}{note} | {} | {mean} | {} | {} | {} | {} |",
            f.group_key,
            f.n,
            signed(f.delta),
            pval(f.p_adjusted),
            f.cohens_d.map_or("n/a".into(), signed),
            sig_cell(f),
        );
    }
    if !baseline_done {
        baseline_row(out, baseline, findings);
    }
    out.push('\n');
}

fn baseline_row(out: &mut String, baseline: &GroupKey, findings: &ModelFindings) {
    if let Some(s) = findings.summary(baseline) {
        let _ = writeln!(
            out,
            "| {baseline} (baseline) | {} | {} | {} | n/a | n/a | n/a |",
            s.n,
            num(s.mean),
            signed(0.0)
        );
    }
}

fn model_section(out: &mut String, title: &str, f: &ModelFindings, report: &AuditReport) {
    let _ = writeln!(out, "## {title}\n");
    for category in [
        Category::GenderNoun,
        Category::Religion,
        Category::Disability,
    ] {
        let _ = writeln!(out, "### {}\n", category_title(category));
        let rows: Vec<&BiasFinding> = f
            .rollup_findings
            .iter()
            .filter(|r| category_of(&r.group_key) == Some(category))
            .collect();
        findings_table(out, &rows, f, &report.baseline);
    }

    let _ = writeln!(out, "### Most negative prompt groups\n");
    let rows: Vec<&BiasFinding> = f.signature_findings.iter().take(SIGNATURE_ROWS).collect();
    findings_table(out, &rows, f, &report.baseline);

    if !f.any_significant() {
        let _ = writeln!(
            out,
            "No significant group differences at alpha = {} after Holm correction.\n",
            report.alpha_level
        );
    }

    let _ = writeln!(out, "### Interaction residuals\n");
    let multi: Vec<_> = f.interactions.iter().filter(|r| r.markers >= 2).collect();
    if multi.is_empty() {
        out.push_str("No groups with two or more markers.\n\n");
        return;
    }
    let shown: Vec<_> = if multi.len() <= 2 * RESIDUAL_ROWS {
        multi
    } else {
        let mut v = multi[..RESIDUAL_ROWS].to_vec();
        v.extend_from_slice(&multi[multi.len() - RESIDUAL_ROWS..]);
        v
    };
    out.push_str("| group | markers | observed | predicted | residual | SE |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for r in shown {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.group_key,
            r.markers,
            num(r.observed_mean),
            num(r.predicted_mean),
            signed(r.residual),
            num(r.residual_se)
        );
    }
    out.push('\n');
}

fn markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    out.push_str("# Intersectional sentiment audit\n\n");
    let _ = writeln!(
        out,
        "- Battery: {} prompts, baseline `{}`",
        report.battery_size, report.baseline
    );
    let _ = writeln!(
        out,
        "- Models: {}",
        report
            .models
            .iter()
            .map(|m| format!("`{}`", m.model_id))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(
        out,
        "- Significance: Holm-adjusted p < {}",
        report.alpha_level
    );
    let _ = writeln!(
        out,
        "- Manifest: `{}` (config digest `{}`)\n",
        report.manifest.path, report.manifest.config_digest
    );
    out.push_str("Rows are sorted by delta, most negative first. Delta is the group mean minus the baseline mean.\n\n");

    model_section(&mut out, "All models pooled", &report.pooled, report);
    for m in &report.models {
        model_section(&mut out, &format!("Model `{}`", m.model_id), m, report);
    }

    out.push_str("## Topics\n\n");
    for (title, pool, prompts) in [
        (
            "High-scoring prompts",
            crate::topics::Pool::High,
            &report.pools.high,
        ),
        (
            "Low-scoring prompts",
            crate::topics::Pool::Low,
            &report.pools.low,
        ),
    ] {
        let _ = writeln!(out, "### {title}\n");
        for p in prompts {
            let _ = writeln!(
                out,
                "- {} (`{}`, mean {})",
                p.text,
                p.prompt_id,
                num(p.mean)
            );
        }
        out.push('\n');
        for t in report.topics.iter().filter(|t| t.pool == pool) {
            if let Some(id) = &t.prompt_id {
                let _ = writeln!(out, "Prompt `{id}`:\n");
            }
            for topic in &t.topics {
                let _ = writeln!(out, "- Topic {}: {}", topic.id, topic.terms.join(", "));
            }
            out.push('\n');
        }
    }
    out
}
