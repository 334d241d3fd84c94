//! CSV and JSON-lines output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use trome_core::channel_sim::{SimTrace, TraceRecord};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot encode {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("cannot encode {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeRow {
    pub protocol: &'static str,
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub n_packets: usize,
    pub expected_time_us: f64,
    #[serde(rename = "expected_energy_mJ")]
    pub expected_energy_mj: f64,
    pub ratio_vs_naive: f64,
    pub energy_ratio_vs_naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateRow {
    pub protocol: &'static str,
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub n_packets: usize,
    pub payload_bytes: usize,
    pub loss_mode: &'static str,
    pub seed: u64,
    pub runs: u64,
    /// Runs in which every packet arrived.
    pub complete_runs: u64,
    pub permanent_failures: u64,
    pub mean_delivery_us: f64,
    pub mean_completion_us: f64,
    pub stderr_completion_us: f64,
    #[serde(rename = "mean_energy_mJ")]
    pub mean_energy_mj: f64,
    #[serde(rename = "stderr_energy_mJ")]
    pub stderr_energy_mj: f64,
    pub mean_control_bits: f64,
    pub o_cd: f64,
    pub expected_time_us: f64,
    pub ratio_vs_naive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub protocol: &'static str,
    pub m: usize,
    pub n_packets: usize,
    pub payload_bytes: usize,
    pub node_id: u8,
    pub role: &'static str,
    /// Activity name, or `total` for the node's sum.
    pub state: &'static str,
    pub time_us: u64,
    #[serde(rename = "energy_mJ")]
    pub energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    pub protocol: &'static str,
    pub m: usize,
    pub n_packets: usize,
    pub payload_bytes: usize,
    pub control_bits: u64,
    pub data_bits: u64,
    pub o_cd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakEvenRow {
    pub protocol: &'static str,
    pub m: usize,
    /// Smallest payload at which one packet carries at least as many data
    /// bits as control bits; empty if no allowed payload gets there.
    pub break_even_bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub id: String,
    pub check: String,
    pub measured: String,
    pub target: String,
    pub pass: bool,
}

/// Writes `rows` to `<dir>/<stem>.csv` and `<dir>/<stem>.jsonl`.
pub fn write_rows<T: Serialize>(dir: &Path, stem: &str, rows: &[T]) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.into(), source })?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|source| ReportError::Csv { path: csv_path.clone(), source })?;
    for row in rows {
        w.serialize(row).map_err(|source| ReportError::Csv { path: csv_path.clone(), source })?;
    }
    w.flush().map_err(|source| ReportError::Io { path: csv_path.clone(), source })?;

    let json_path = dir.join(format!("{stem}.jsonl"));
    write_jsonl(&json_path, rows)?;
    Ok(vec![csv_path, json_path])
}

/// CSV text of `rows`, header included.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io { path: path.into(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|source| ReportError::Json { path: path.into(), source })?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Serialize)]
struct FrameJson {
    kind: &'static str,
    src: u8,
    dest: Option<u8>,
    bytes: usize,
    airtime_us: u64,
    ttl: Option<u8>,
}

#[derive(Debug, Serialize)]
struct RecordJson {
    time_us: u64,
    node: u8,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame: Option<FrameJson>,
    #[serde(skip_serializing_if = "str::is_empty")]
    note: &'static str,
}

fn record_json(r: &TraceRecord) -> RecordJson {
    RecordJson {
        time_us: r.time_us,
        node: r.node,
        kind: r.kind.as_str(),
        frame: r.frame.map(|f| FrameJson {
            kind: f.kind,
            src: f.src,
            dest: f.dest,
            bytes: f.bytes,
            airtime_us: f.airtime_us,
            ttl: f.ttl,
        }),
        note: r.note,
    }
}

/// One JSON object per trace record, in time order.
pub fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.into(), source })?;
    }
    let rows: Vec<RecordJson> = trace.records.iter().map(record_json).collect();
    write_jsonl(path, &rows)
}
