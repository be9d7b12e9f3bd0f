//! Markdown summary of one run's artifact directory. Rendering the same
//! directory twice must give identical bytes: everything is read back
//! from disk, iterated in sorted order, and re-serialized through sorted
//! JSON maps.

use std::fmt;
use std::fs;
use std::path::Path;

use unibed_core::risk::{Factor, RiskReport};

use crate::artifacts::{read_manifest, RunManifest};
use crate::runner::AssertionResult;

#[derive(Debug)]
pub enum ReportError {
    MissingManifest(String),
    Io(String),
}

impl fmt::Display for ReportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportError::MissingManifest(e) => write!(f, "run manifest required: {}", e),
            ReportError::Io(e) => write!(f, "report io: {}", e),
        }
    }
}

impl std::error::Error for ReportError {}

fn read_json_value(dir: &Path, rel: &str) -> Option<serde_json::Value> {
    let bytes = fs::read(dir.join(rel)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn render_risk(out: &mut String, dir: &Path, manifest: &RunManifest) {
    out.push_str("## Risk assessment\n\n");
    if !manifest.artifacts.contains_key("risk_report.json") {
        out.push_str("_absent: this run carries no architecture model._\n\n");
        return;
    }
    let report: Option<RiskReport> = fs::read(dir.join("risk_report.json"))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    let Some(report) = report else {
        out.push_str("_absent: risk report unreadable._\n\n");
        return;
    };
    out.push_str("| factor | score |\n|---|---|\n");
    for f in Factor::ALL {
        out.push_str(&format!("| {} | {} |\n", f.as_str(), report.scores.get(f)));
    }
    out.push('\n');
    if report.findings.is_empty() {
        out.push_str("No findings.\n\n");
    } else {
        out.push_str("### Findings\n\n");
        for fd in &report.findings {
            out.push_str(&format!(
                "- **{}** ({}, {}) on `{}`: {}. {}\n",
                fd.rule,
                fd.severity.as_str(),
                fd.factor.as_str(),
                fd.subject,
                fd.title,
                fd.evidence
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!("_{}_\n\n", report.scale));
}

fn render_attacks(out: &mut String, dir: &Path, manifest: &RunManifest) {
    out.push_str("## Attack outcomes\n\n");
    let labels: Vec<&String> = manifest
        .artifacts
        .keys()
        .filter(|k| k.starts_with("attack/") && k.ends_with(".json"))
        .collect();
    if labels.is_empty() {
        out.push_str("_none recorded._\n\n");
        return;
    }
    for rel in labels {
        let label = rel.trim_start_matches("attack/").trim_end_matches(".json");
        out.push_str(&format!("### {}\n\n", label));
        match read_json_value(dir, rel) {
            Some(v) => {
                let pretty = serde_json::to_string_pretty(&v).unwrap_or_else(|_| "{}".to_string());
                out.push_str("```json\n");
                out.push_str(&pretty);
                out.push_str("\n```\n\n");
            }
            None => out.push_str("_absent._\n\n"),
        }
    }
}

fn render_snapshots(out: &mut String, dir: &Path, manifest: &RunManifest) {
    let labels: Vec<&String> = manifest
        .artifacts
        .keys()
        .filter(|k| k.starts_with("snapshots/") && k.ends_with(".json"))
        .collect();
    if labels.is_empty() {
        return;
    }
    out.push_str("## Map snapshots\n\n");
    for rel in labels {
        let label = rel.trim_start_matches("snapshots/").trim_end_matches(".json");
        out.push_str(&format!("### {}\n\n", label));
        let Some(v) = read_json_value(dir, rel) else {
            out.push_str("_absent._\n\n");
            continue;
        };
        out.push_str("| sensor | average | reports |\n|---|---|---|\n");
        if let Some(cells) = v.get("cells").and_then(|c| c.as_array()) {
            for cell in cells {
                let mac = cell.get("mac").and_then(|m| m.as_str()).unwrap_or("?");
                let avg = match cell.get("avg_pm25") {
                    Some(serde_json::Value::Number(n)) => format!("{:.3}", n.as_f64().unwrap_or(0.0)),
                    _ => "-".to_string(),
                };
                let count = cell.get("report_count").and_then(|c| c.as_u64()).unwrap_or(0);
                out.push_str(&format!("| `{}` | {} | {} |\n", mac, avg, count));
            }
        }
        out.push('\n');
    }
}

fn render_plots(out: &mut String, manifest: &RunManifest) {
    let plots: Vec<&String> = manifest
        .artifacts
        .keys()
        .filter(|k| k.starts_with("plots/") && k.ends_with(".svg"))
        .collect();
    if plots.is_empty() {
        return;
    }
    out.push_str("## Plots\n\n");
    for rel in plots {
        let name = rel.trim_start_matches("plots/").trim_end_matches(".svg");
        out.push_str(&format!("![{}]({})\n\n", name, rel));
    }
}

fn render_assertions(out: &mut String, dir: &Path, manifest: &RunManifest) {
    out.push_str("## Assertions\n\n");
    if !manifest.artifacts.contains_key("assertions.json") {
        out.push_str("_absent._\n\n");
        return;
    }
    let parsed: Option<Vec<AssertionResult>> = fs::read(dir.join("assertions.json"))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    match parsed {
        Some(results) if !results.is_empty() => {
            for r in &results {
                let mark = if r.pass { "x" } else { " " };
                out.push_str(&format!("- [{}] {}: {}\n", mark, r.check, r.detail));
            }
            out.push('\n');
        }
        Some(_) => out.push_str("_none declared._\n\n"),
        None => out.push_str("_absent._\n\n"),
    }
}

/// Renders `report.md` content for the artifact directory. The manifest
/// is required; every other artifact degrades to an "absent" marker.
pub fn render_report(dir: &Path) -> Result<String, ReportError> {
    let manifest = read_manifest(dir).map_err(|e| ReportError::MissingManifest(e.to_string()))?;

    let mut out = String::with_capacity(8192);
    out.push_str(&format!("# Run report: {}\n\n", manifest.scenario));
    out.push_str(&format!("- seed: `{}`\n", manifest.seed));
    out.push_str(&format!("- config sha256: `{}`\n\n", manifest.config_sha256));

    render_risk(&mut out, dir, &manifest);
    render_attacks(&mut out, dir, &manifest);
    render_snapshots(&mut out, dir, &manifest);
    render_plots(&mut out, &manifest);
    render_assertions(&mut out, dir, &manifest);

    out.push_str("## Artifacts\n\n| path | sha256 |\n|---|---|\n");
    for (rel, hash) in &manifest.artifacts {
        out.push_str(&format!("| `{}` | `{}` |\n", rel, hash));
    }
    out.push('\n');
    Ok(out)
}
