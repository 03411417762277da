//! `run`: one trace per configured algorithm, with optional step tuning.

use std::path::Path;

use exdiff_core::engine::{run_engine, Algorithm, Engine, RunConfig, RunResult, Status, StepSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AlgorithmSpec, Experiment, ExperimentConfig, TuneSpec};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, write_file, write_json, write_trace_csv, StatusSidecar};

/// One evaluated step during tuning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub stage: &'static str,
    pub mu: f64,
    pub status: &'static str,
    pub iterations: usize,
    pub comm_units: usize,
    pub final_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: AlgorithmSpec,
    pub kind: Algorithm,
    pub step: StepSpec,
    pub result: RunResult,
    pub tuning: Vec<TuneRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub name: String,
    pub label: String,
    pub step: serde_json::Value,
    pub tuned: bool,
    pub status: String,
    pub iterations: usize,
    pub comm_units: usize,
    pub final_rel_error: f64,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub agents: usize,
    pub dim: usize,
    pub edges: usize,
    /// Scalars exchanged per communication unit, `2ME`.
    pub variables_per_unit: usize,
    pub max_iters: usize,
    pub stop: f64,
    pub runs: Vec<RunEntry>,
}

fn step_json(s: &StepSpec) -> serde_json::Value {
    match s {
        StepSpec::Uniform(mu) => serde_json::json!({ "mu": mu }),
        StepSpec::PerAgent(mu) => serde_json::json!({ "mu": mu }),
        StepSpec::Weighted { q, mu_o } => serde_json::json!({ "q": q, "mu_o": mu_o }),
    }
}

fn single_run(exp: &Experiment, kind: Algorithm, step: &StepSpec, cfg: &RunConfig) -> Result<RunResult> {
    let mut engine = Engine::new(kind, &exp.model, &exp.matrix, step, exp.w_init.clone())?;
    let t = engine.target_weights(&exp.model);
    let (reference, _) = exp.model.minimize_weighted(&t)?;
    Ok(run_engine(&mut engine, &exp.model, &reference, cfg))
}

fn tune_row(stage: &'static str, mu: f64, r: &RunResult) -> TuneRow {
    let last = r.trace.last().expect("trace has a start row");
    TuneRow {
        stage,
        mu,
        status: r.status.name(),
        iterations: last.iteration,
        comm_units: last.comm_units,
        final_rel_error: last.rel_error,
    }
}

/// Fewest communication units among converged runs, then smallest final error.
fn better(a: &RunResult, b: &RunResult) -> bool {
    let key = |r: &RunResult| {
        let last = r.trace.last().unwrap();
        let conv = r.status == Status::Converged;
        (!conv, if conv { last.comm_units as f64 } else { last.rel_error })
    };
    let (ka, kb) = (key(a), key(b));
    (!ka.0 && kb.0) || (ka.0 == kb.0 && ka.1 < kb.1)
}

fn tune(exp: &Experiment, kind: Algorithm, spec: &TuneSpec, cfg: &RunConfig) -> Result<(f64, RunResult, Vec<TuneRow>)> {
    let mut rows = Vec::new();
    let grid: Vec<RunResult> =
        spec.grid.iter().map(|&mu| single_run(exp, kind, &StepSpec::Uniform(mu), cfg)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in grid.iter().enumerate() {
        rows.push(tune_row("grid", spec.grid[i], r));
        if better(r, &grid[best]) {
            best = i;
        }
    }
    let mut best_mu = spec.grid[best];
    let mut best_run = grid[best].clone();
    if spec.refine > 0 && spec.grid.len() > 1 {
        let mut sorted = spec.grid.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = sorted.iter().position(|&x| x == best_mu).unwrap();
        let lo = if pos > 0 { sorted[pos - 1] } else { best_mu / 2.0 };
        let hi = if pos + 1 < sorted.len() { sorted[pos + 1] } else { best_mu * 2.0 };
        let k = spec.refine;
        for i in 1..=k {
            let t = i as f64 / (k + 1) as f64;
            let mu = (lo.ln() + t * (hi.ln() - lo.ln())).exp();
            let r = single_run(exp, kind, &StepSpec::Uniform(mu), cfg)?;
            rows.push(tune_row("refine", mu, &r));
            if better(&r, &best_run) {
                best_mu = mu;
                best_run = r;
            }
        }
    }
    Ok((best_mu, best_run, rows))
}

/// Run every configured algorithm; results keep the configuration order.
pub fn execute(cfg: &ExperimentConfig, exp: &Experiment) -> Result<Vec<RunOutcome>> {
    cfg.require_algorithms()?;
    let rc = RunConfig { max_iters: cfg.max_iters, stop: cfg.stop };
    for (i, a) in cfg.algorithms.iter().enumerate() {
        let kind = Algorithm::from_name(&a.name).expect("validated");
        Engine::new(kind, &exp.model, &exp.matrix, &cfg.step_spec(a), exp.w_init.clone())
            .map_err(|e| CliError::config(format!("algorithms[{i}]"), e.to_string()))?;
    }
    cfg.algorithms
        .par_iter()
        .map(|a| {
            let kind = Algorithm::from_name(&a.name).expect("validated");
            match &a.tune {
                Some(t) => {
                    let (mu, result, tuning) = tune(exp, kind, t, &rc)?;
                    Ok(RunOutcome { spec: a.clone(), kind, step: StepSpec::Uniform(mu), result, tuning })
                }
                None => {
                    let step = cfg.step_spec(a);
                    let result = single_run(exp, kind, &step, &rc)?;
                    Ok(RunOutcome { spec: a.clone(), kind, step, result, tuning: Vec::new() })
                }
            }
        })
        .collect()
}

pub fn write_tuning_csv(path: &Path, rows: &[TuneRow]) -> Result<()> {
    let mut out = String::from("stage,mu,status,iterations,comm_units,final_rel_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.stage,
            fmt_f64(r.mu),
            r.status,
            r.iterations,
            r.comm_units,
            fmt_f64(r.final_rel_error)
        ));
    }
    write_file(path, out.as_bytes())
}

/// Execute and write `<stem>.csv`, `<stem>.status.json`, tuning tables and `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let exp = cfg.build()?;
    let outcomes = execute(cfg, &exp)?;
    let mut runs = Vec::new();
    for o in &outcomes {
        let stem = o.spec.stem();
        write_trace_csv(&out.join(format!("{stem}.csv")), &o.result.trace)?;
        write_json(&out.join(format!("{stem}.status.json")), &StatusSidecar::from_run(&o.result))?;
        if !o.tuning.is_empty() {
            write_tuning_csv(&out.join(format!("{stem}.tuning.csv")), &o.tuning)?;
        }
        let last = o.result.trace.last().unwrap();
        runs.push(RunEntry {
            name: o.kind.name().to_string(),
            label: stem.to_string(),
            step: step_json(&o.step),
            tuned: !o.tuning.is_empty(),
            status: o.result.status.name().to_string(),
            iterations: last.iteration,
            comm_units: last.comm_units,
            final_rel_error: last.rel_error,
            final_grad_norm: last.grad_norm,
        });
    }
    let g = exp.matrix.graph();
    let summary = RunSummary {
        agents: g.n(),
        dim: exp.model.dim(),
        edges: g.edge_count(),
        variables_per_unit: 2 * exp.model.dim() * g.edge_count(),
        max_iters: cfg.max_iters,
        stop: cfg.stop,
        runs,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
