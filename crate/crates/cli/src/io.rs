//! File formats: trace CSV, status sidecar, graph JSON, matrix CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use exdiff_core::engine::{RunResult, TraceRecord};
use exdiff_core::graph::Graph;
use exdiff_core::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const TRACE_HEADER: &str = "iter,comm_units,rel_error,grad_norm";

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!("{},{},{},{}\n", r.iteration, r.comm_units, fmt_f64(r.rel_error), fmt_f64(r.grad_norm)));
    }
    write_file(path, out.as_bytes())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let fmt = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| fmt(e.to_string()))?.iter().map(String::from).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(fmt(format!("unexpected header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let bad = |what: &str| fmt(format!("row {}: bad {what}", i + 1));
        out.push(TraceRecord {
            iteration: rec[0].parse().map_err(|_| bad("iter"))?,
            comm_units: rec[1].parse().map_err(|_| bad("comm_units"))?,
            rel_error: rec[2].parse().map_err(|_| bad("rel_error"))?,
            grad_norm: rec[3].parse().map_err(|_| bad("grad_norm"))?,
        });
    }
    Ok(out)
}

/// Terminal status sidecar of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSidecar {
    pub status: String,
    pub iterations: usize,
    pub final_rel_error: f64,
}

impl StatusSidecar {
    pub fn from_run(r: &RunResult) -> Self {
        StatusSidecar { status: r.status.name().to_string(), iterations: r.iterations(), final_rel_error: r.final_rel_error() }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse { file: path.to_path_buf(), source })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

pub fn read_graph_json(path: &Path) -> Result<Graph> {
    let g: GraphFile = read_json(path)?;
    Graph::new(g.n, &g.edges).map_err(|e| CliError::Format { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn write_graph_json(path: &Path, g: &Graph) -> Result<()> {
    write_json(path, &GraphFile { n: g.n(), edges: g.edges() })
}

/// Square matrix, one row per line, comma separated, no header.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let fmt = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(|e| fmt(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| fmt(format!("row {}: `{s}` is not a number", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(fmt(format!("expected a square matrix, got {n} rows")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}
