//! Line-delimited JSON preference data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::PreferenceRecord;
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Records whose `margin` is below this are dropped. Records without a
    /// margin are always kept.
    pub margin_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: Vec<PreferenceRecord>,
    pub rejected: Vec<RejectedLine>,
    pub below_margin: usize,
    pub blank_lines: usize,
}

impl IngestReport {
    pub fn summary(&self) -> String {
        format!(
            "{} records kept, {} lines rejected, {} below margin",
            self.records.len(),
            self.rejected.len(),
            self.below_margin
        )
    }
}

/// Reads one JSON record per line. Every excluded line is accounted for in
/// the report. An error is raised only when the file is unreadable or when it
/// has content and every non-blank line is malformed.
pub fn ingest_preference_file(path: &Path, opts: &IngestOptions) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut report = IngestReport::default();
    let mut content_lines = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            report.blank_lines += 1;
            continue;
        }
        content_lines += 1;
        let reject = |reason: String| RejectedLine {
            line: i + 1,
            reason,
        };
        let rec: PreferenceRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(reject(e.to_string()));
                continue;
            }
        };
        if rec.chosen == rec.rejected {
            report.rejected.push(reject(format!(
                "chosen_id equals rejected_id ({})",
                rec.chosen
            )));
            continue;
        }
        if !(rec.weight > 0.0 && rec.weight.is_finite()) {
            report.rejected.push(reject(format!(
                "weight must be positive, got {}",
                rec.weight
            )));
            continue;
        }
        if let Some(m) = rec.margin {
            if !m.is_finite() {
                report.rejected.push(reject("margin must be finite".into()));
                continue;
            }
            if opts.margin_threshold.is_some_and(|t| m < t) {
                report.below_margin += 1;
                continue;
            }
        }
        report.records.push(rec);
    }
    if content_lines > 0 && report.rejected.len() == content_lines {
        let first = &report.rejected[0];
        return Err(LabError::Ingestion(format!(
            "{}: all {content_lines} lines are malformed (line {}: {})",
            path.display(),
            first.line,
            first.reason
        )));
    }
    Ok(report)
}

/// One JSON object per line, in dataset order.
pub(crate) fn records_to_jsonl(records: &[PreferenceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
