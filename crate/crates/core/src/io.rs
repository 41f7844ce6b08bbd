//! CSV and JSON serialization of run records.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::engine::{Counters, RunFailure, RunMeta, RunRecord, Terminal};

/// Header "n,half,x_0,…,y_0,…,signal_norm".
pub fn csv_header(dim: usize) -> String {
    let mut h = String::from("n,half");
    for i in 0..dim {
        write!(h, ",x_{i}").unwrap();
    }
    for i in 0..dim {
        write!(h, ",y_{i}").unwrap();
    }
    h.push_str(",signal_norm");
    h
}

/// Trajectory rows as CSV. `{}` formatting of f64 is shortest round-trip and locale-free.
pub fn record_csv(rec: &RunRecord) -> String {
    let mut s = csv_header(rec.meta.dim);
    s.push('\n');
    for r in &rec.rows {
        write!(s, "{},{}", r.n, r.half as u8).unwrap();
        for v in r.x.iter().chain(&r.y) {
            write!(s, ",{v}").unwrap();
        }
        writeln!(s, ",{}", r.signal_norm).unwrap();
    }
    s
}

/// JSON sidecar: config echo plus everything except the rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub meta: RunMeta,
    pub terminal: Terminal,
    pub counters: Counters,
    pub failure: Option<RunFailure>,
    pub warnings: Vec<String>,
    pub sup_dual_norm: f64,
    pub rows: usize,
}

pub fn metadata(config: &ExperimentConfig, rec: &RunRecord) -> Metadata {
    Metadata {
        config: config.clone(),
        meta: rec.meta.clone(),
        terminal: rec.terminal.clone(),
        counters: rec.counters.clone(),
        failure: rec.failure.clone(),
        warnings: rec.warnings.clone(),
        sup_dual_norm: rec.sup_dual_norm,
        rows: rec.rows.len(),
    }
}

pub fn metadata_json(config: &ExperimentConfig, rec: &RunRecord) -> String {
    serde_json::to_string_pretty(&metadata(config, rec)).expect("metadata serializes") + "\n"
}

/// Write to a temporary sibling and rename, so readers never see partial files.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Plain numeric table, used for flows and diagnostics.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
