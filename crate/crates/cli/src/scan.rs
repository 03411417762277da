//! `stability-scan`: empirical largest stable step per algorithm.

use std::path::Path;

use exdiff_core::engine::{run_engine, Algorithm, Engine, RunConfig, RunResult, Status, StepSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{random_init, Experiment, ExperimentConfig, ScanSpec};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, write_file, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub algorithm: String,
    pub phase: &'static str,
    pub mu: f64,
    pub status: &'static str,
    pub stable: bool,
    pub iterations: usize,
    pub final_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub algorithm: String,
    /// Largest step observed stable; `None` when the smallest grid point already fails.
    pub max_stable_mu: Option<f64>,
    /// Smallest step observed unstable above `max_stable_mu`; `None` if the whole grid is stable.
    pub first_unstable_mu: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub stop: f64,
    pub results: Vec<ScanResult>,
}

/// Converged, or still shrinking at the end of the budget.
pub fn is_stable(r: &RunResult) -> bool {
    match r.status {
        Status::Converged => true,
        Status::Diverged => false,
        Status::Exhausted => {
            let mid = r.trace[r.trace.len() / 2].rel_error;
            let last = r.final_rel_error();
            last.is_finite() && last < mid
        }
    }
}

fn probe(exp: &Experiment, kind: Algorithm, mu: f64, scan: &ScanSpec) -> Result<RunResult> {
    let n = exp.model.n_agents();
    let w0 = random_init(scan.init_seed, n, exp.model.dim(), 1.0);
    let mut engine = Engine::new(kind, &exp.model, &exp.matrix, &StepSpec::Uniform(mu), w0)?;
    let t = engine.target_weights(&exp.model);
    let (reference, _) = exp.model.minimize_weighted(&t)?;
    Ok(run_engine(&mut engine, &exp.model, &reference, &RunConfig { max_iters: scan.max_iters, stop: scan.stop }))
}

fn row(kind: Algorithm, phase: &'static str, mu: f64, r: &RunResult) -> ScanRow {
    ScanRow {
        algorithm: kind.name().to_string(),
        phase,
        mu,
        status: r.status.name(),
        stable: is_stable(r),
        iterations: r.iterations(),
        final_rel_error: r.final_rel_error(),
    }
}

/// Grid pass, then bisection between the last stable point and the next one.
pub fn scan_algorithm(exp: &Experiment, kind: Algorithm, scan: &ScanSpec) -> Result<(ScanResult, Vec<ScanRow>)> {
    let mut grid = scan.grid.points();
    grid.sort_by(f64::total_cmp);
    let runs: Vec<RunResult> = grid.par_iter().map(|&mu| probe(exp, kind, mu, scan)).collect::<Result<_>>()?;
    let mut rows: Vec<ScanRow> = grid.iter().zip(&runs).map(|(&mu, r)| row(kind, "grid", mu, r)).collect();
    let prefix = rows.iter().take_while(|r| r.stable).count();
    if prefix == 0 {
        let res = ScanResult { algorithm: kind.name().into(), max_stable_mu: None, first_unstable_mu: Some(grid[0]) };
        return Ok((res, rows));
    }
    if prefix == grid.len() {
        let res =
            ScanResult { algorithm: kind.name().into(), max_stable_mu: Some(grid[prefix - 1]), first_unstable_mu: None };
        return Ok((res, rows));
    }
    let (mut lo, mut hi) = (grid[prefix - 1], grid[prefix]);
    while hi - lo > scan.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        let r = probe(exp, kind, mid, scan)?;
        let rw = row(kind, "bisect", mid, &r);
        if rw.stable {
            lo = mid;
        } else {
            hi = mid;
        }
        rows.push(rw);
    }
    Ok((ScanResult { algorithm: kind.name().into(), max_stable_mu: Some(lo), first_unstable_mu: Some(hi) }, rows))
}

pub fn write_scan_csv(path: &Path, rows: &[ScanRow]) -> Result<()> {
    let mut out = String::from("algorithm,phase,mu,status,stable,iterations,final_rel_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.phase,
            fmt_f64(r.mu),
            r.status,
            r.stable,
            r.iterations,
            fmt_f64(r.final_rel_error)
        ));
    }
    write_file(path, out.as_bytes())
}

/// Scan every configured algorithm and write `scan.csv` and `scan_summary.json`.
pub fn cmd_scan(cfg: &ExperimentConfig, out: &Path) -> Result<ScanSummary> {
    let scan = cfg.scan.as_ref().ok_or_else(|| CliError::config("scan", "is required for stability-scan"))?;
    cfg.require_algorithms()?;
    let exp = cfg.build()?;
    if !exp.model.is_quadratic() {
        return Err(CliError::config("model", "stability-scan needs a quadratic model"));
    }
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for a in &cfg.algorithms {
        let kind = Algorithm::from_name(&a.name).expect("validated");
        let (res, r) = scan_algorithm(&exp, kind, scan)?;
        rows.extend(r);
        results.push(res);
    }
    write_scan_csv(&out.join("scan.csv"), &rows)?;
    let summary = ScanSummary { rel_tol: scan.rel_tol, max_iters: scan.max_iters, stop: scan.stop, results };
    write_json(&out.join("scan_summary.json"), &summary)?;
    Ok(summary)
}
