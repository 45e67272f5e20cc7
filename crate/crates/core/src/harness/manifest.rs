use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Task};
use super::HarnessError;
use crate::policy::{EvalMetrics, QueryEval, TraceRecord};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const TRACE_FILE: &str = "trace.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POLICY_FILE: &str = "policy.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    Failed,
}

/// Headline metrics. Every field is derived from the trace file alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Summary {
    pub mean_ndcg: Option<f64>,
    pub mean_tokens: Option<f64>,
    pub modification_rate: Option<f64>,
    pub queries: usize,
    pub train_steps: Option<usize>,
    pub final_validation_ndcg: Option<f64>,
}

impl Summary {
    pub fn from_trace(records: &[TraceRecord]) -> Summary {
        let evals: Vec<QueryEval> = records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Eval(q) => Some(q.clone()),
                TraceRecord::Train(_) => None,
            })
            .collect();
        let last_train = records.iter().rev().find_map(|r| match r {
            TraceRecord::Train(s) => Some(s),
            TraceRecord::Eval(_) => None,
        });
        let mut summary = Summary {
            queries: evals.len(),
            train_steps: last_train.map(|s| s.step),
            final_validation_ndcg: last_train.map(|s| s.validation_ndcg),
            ..Summary::default()
        };
        if let Some(first) = evals.first() {
            let metrics = EvalMetrics::from_queries(first.mode, evals.clone());
            summary.mean_ndcg = Some(metrics.mean_ndcg);
            summary.mean_tokens = Some(metrics.mean_tokens);
            summary.modification_rate = Some(metrics.modification_rate);
        }
        summary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub dataset: String,
    pub task: Task,
    pub seed: u64,
    pub code_version: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub output_dir: PathBuf,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub trace_file: String,
    /// Absent for failed runs.
    #[serde(default)]
    pub summary: Option<Summary>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| HarnessError::SchemaMismatch(format!("{}: {e}", path.display())))?;
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(MANIFEST_SCHEMA_VERSION)) {
            return Err(HarnessError::SchemaMismatch(format!(
                "{}: schema_version {version:?}, expected {MANIFEST_SCHEMA_VERSION}",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| HarnessError::SchemaMismatch(format!("{}: {e}", path.display())))
    }

    /// Run label used in comparisons: the output directory's name.
    pub fn label(&self) -> String {
        self.output_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.output_dir.display().to_string())
    }
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, HarnessError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| HarnessError::SchemaMismatch(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub const METRIC_COLUMNS: [&str; 3] = ["ndcg@10", "avg_tokens", "modification_rate"];
const MISSING: &str = "–";

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub dataset: String,
    pub run: String,
    pub metrics: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    /// Grouped by dataset tag (sorted), input order within a group.
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(manifests: &[RunManifest]) -> Result<ComparisonTable, HarnessError> {
    if manifests.len() < 2 {
        return Err(HarnessError::Config(format!("compare needs at least 2 manifests, got {}", manifests.len())));
    }
    let mut groups: BTreeMap<&str, Vec<ComparisonRow>> = BTreeMap::new();
    for m in manifests {
        let s = m.summary.clone().unwrap_or_default();
        let metrics = [s.mean_ndcg, s.mean_tokens, s.modification_rate];
        for (name, v) in METRIC_COLUMNS.iter().zip(&metrics) {
            if v.is_none() {
                tracing::warn!(run = %m.label(), metric = name, "metric missing from manifest");
            }
        }
        groups.entry(&m.dataset).or_default().push(ComparisonRow {
            dataset: m.dataset.clone(),
            run: m.label(),
            metrics,
        });
    }
    Ok(ComparisonTable { rows: groups.into_values().flatten().collect() })
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x:.decimals$}"))
}

impl ComparisonTable {
    fn header() -> Vec<&'static str> {
        let mut h = vec!["dataset", "run"];
        h.extend(METRIC_COLUMNS);
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.dataset.clone(),
                    r.run.clone(),
                    cell(r.metrics[0], 4),
                    cell(r.metrics[1], 2),
                    cell(r.metrics[2], 4),
                ]
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = Self::header().join("\t");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Aligned text with a blank line between dataset groups.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = Self::header().into_iter().map(String::from).collect();
        let rows = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .map(|r| r[c].chars().count())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                let pad = widths[i] - c.chars().count();
                if i < 2 {
                    let _ = write!(s, "{c}{}", " ".repeat(pad));
                } else {
                    let _ = write!(s, "{}{c}", " ".repeat(pad));
                }
                if i + 1 < cells.len() {
                    s.push_str("  ");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        let mut prev: Option<&str> = None;
        for (row, data) in rows.iter().zip(&self.rows) {
            if prev.is_some_and(|p| p != data.dataset) {
                out.push('\n');
            }
            prev = Some(&data.dataset);
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}
