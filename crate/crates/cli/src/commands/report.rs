use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use wgflow::diagnostics::DiagnosticReport;

use crate::output::OutDir;
use crate::{CliError, Context, Outcome};

#[derive(Args, Debug)]
pub struct Opts {
    /// Directory to scan (default: the output directory).
    dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Entry {
    source: String,
    #[serde(flatten)]
    report: DiagnosticReport,
}

#[derive(Serialize)]
struct Summary {
    total: usize,
    passed: usize,
    failed: usize,
    reports: Vec<Entry>,
}

pub fn run(ctx: &Context, opts: Opts) -> Result<Outcome, CliError> {
    let dir = opts.dir.unwrap_or_else(|| ctx.out.clone());
    let mut entries = Vec::new();
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == "report.json")
        .map(|e| e.into_path())
        .collect();
    files.sort();
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let reports: Vec<DiagnosticReport> =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let source = path
            .parent()
            .and_then(|p| p.strip_prefix(&dir).ok())
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        entries.extend(reports.into_iter().map(|report| Entry {
            source: source.clone(),
            report,
        }));
    }
    if entries.is_empty() {
        return Err(CliError::Config(format!("no report.json files below {}", dir.display())));
    }
    for e in &entries {
        let status = if e.report.pass { "PASS" } else { "FAIL" };
        println!("{status} [{}] {}", e.source, e.report.kind);
    }
    let passed = entries.iter().filter(|e| e.report.pass).count();
    let summary = Summary {
        total: entries.len(),
        passed,
        failed: entries.len() - passed,
        reports: entries,
    };
    println!("{passed}/{} checks pass", summary.total);
    OutDir::create(&dir)?.write_json("summary.json", &summary)?;
    Ok(Outcome::from_pass(summary.failed == 0))
}
