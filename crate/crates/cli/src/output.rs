//! Output directory handling. Every file is written to a temporary file in
//! the target directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wgflow::diagnostics::DiagnosticReport;

use crate::CliError;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        tmp.write_all(contents).map_err(|e| CliError::io(&target, e))?;
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, values: &[T]) -> Result<PathBuf, CliError> {
        let mut text = Vec::new();
        for v in values {
            serde_json::to_writer(&mut text, v).map_err(|e| CliError::Config(e.to_string()))?;
            text.push(b'\n');
        }
        self.write(name, &text)
    }

    pub fn write_csv<R, I>(&self, name: &str, header: &[&str], rows: I) -> Result<PathBuf, CliError>
    where
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
        I: IntoIterator<Item = R>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let path = self.path(name);
        let csv_err = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
        self.write(name, &bytes)
    }
}

/// Number formatting shared by every CSV: shortest round-trip form, with
/// `inf` for infinite values.
pub fn num(v: f64) -> String {
    wgflow::density::fmt_value(v)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Collected pass/fail checks of one command run.
#[derive(Default)]
pub struct Reports(pub Vec<DiagnosticReport>);

impl Reports {
    pub fn add(&mut self, kind: &str, inputs: serde_json::Value, value: f64, tolerance: f64, pass: bool) -> bool {
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{status} {kind}: value {value:.6e}, tolerance {tolerance:.1e}");
        self.0.push(DiagnosticReport {
            kind: kind.to_string(),
            inputs,
            value,
            tolerance,
            pass,
        });
        pass
    }

    pub fn all_pass(&self) -> bool {
        self.0.iter().all(|r| r.pass)
    }

    pub fn save(&self, out: &OutDir) -> Result<(), CliError> {
        out.write_json("report.json", &self.0).map(|_| ())
    }
}
