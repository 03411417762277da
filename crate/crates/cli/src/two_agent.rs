//! `two-agent`: closed-form eigen report plus simulated traces for both algorithms.

use std::path::Path;

use exdiff_core::cost::{isotropic_mse_model, CostModel};
use exdiff_core::engine::{run, Algorithm, RunConfig, RunResult, StepSpec};
use exdiff_core::graph::{CombinationMatrix, Graph};
use exdiff_core::stability::{two_agent_case, TwoAgentCase};
use exdiff_core::{Complex64, DMatrix};
use serde::Serialize;

use crate::config::random_init;
use crate::error::{CliError, Result};
use crate::io::{write_json, write_trace_csv, StatusSidecar};
use crate::scan::is_stable;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoAgentArgs {
    pub a: f64,
    pub sigma2: f64,
    pub mu: f64,
    pub mu_e: f64,
    pub iterations: usize,
    pub stop: f64,
    pub seed: u64,
    /// Upper end of an EXTRA onset bisection over `(0, scan_max]`.
    pub scan_max: Option<f64>,
    pub rel_tol: f64,
}

impl Default for TwoAgentArgs {
    fn default() -> Self {
        TwoAgentArgs {
            a: 0.5,
            sigma2: 1.0,
            mu: 1.9,
            mu_e: 1.6,
            iterations: 20_000,
            stop: 1e-10,
            seed: 0,
            scan_max: None,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Root {
    pub re: f64,
    pub im: f64,
    pub abs: f64,
}

fn roots(z: &[Complex64]) -> Vec<Root> {
    z.iter().map(|z| Root { re: z.re, im: z.im, abs: z.norm() }).collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideReport {
    pub step: f64,
    pub matrix: Vec<Vec<f64>>,
    pub roots: Vec<Root>,
    pub spectral_radius: f64,
    pub predicted_stable: bool,
    pub observed_status: String,
    pub observed_stable: bool,
    pub final_rel_error: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Onset {
    pub stable_mu: f64,
    pub unstable_mu: f64,
    /// `(a + 1)/σ²`; every step at or above it is unstable.
    pub sufficient: f64,
    /// `(1 + 3a)/(2σ²)`, where the spectral radius of `E_e` reaches one.
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoAgentReport {
    pub a: f64,
    pub sigma2: f64,
    pub delta_disc: f64,
    pub root_mismatch: f64,
    /// `0 < μσ² < 2`.
    pub diffusion_predicate: bool,
    /// `μᵉσ² ≥ a + 1`.
    pub extra_sufficient_unstable: bool,
    pub exact_diffusion: SideReport,
    pub extra: SideReport,
    pub extra_onset: Option<Onset>,
}

struct Setup {
    model: CostModel,
    cm: CombinationMatrix,
    w0: DMatrix<f64>,
}

fn setup(args: &TwoAgentArgs) -> Result<Setup> {
    if !(args.a > 0.0 && args.a < 1.0) {
        return Err(CliError::config("a", format!("{} is not in (0, 1)", args.a)));
    }
    if !(args.sigma2 > 0.0) {
        return Err(CliError::config("sigma2", "must be positive"));
    }
    if !(args.mu > 0.0) || !(args.mu_e > 0.0) {
        return Err(CliError::config("mu", "step sizes must be positive"));
    }
    let model = isotropic_mse_model(2, args.sigma2, &[1.0])?;
    let cm = CombinationMatrix::new(Graph::complete(2)?, TwoAgentCase::combination(args.a))?;
    Ok(Setup { model, cm, w0: random_init(args.seed, 2, 1, 1.0) })
}

fn simulate(s: &Setup, kind: Algorithm, mu: f64, args: &TwoAgentArgs) -> Result<RunResult> {
    let cfg = RunConfig { max_iters: args.iterations, stop: args.stop };
    Ok(run(kind, &s.model, &s.cm, &StepSpec::Uniform(mu), Some(s.w0.clone()), &cfg)?)
}

fn side(step: f64, m: &DMatrix<f64>, z: &[Complex64], rho: f64, predicted: bool, r: &RunResult) -> SideReport {
    let observed = is_stable(r);
    SideReport {
        step,
        matrix: rows(m),
        roots: roots(z),
        spectral_radius: rho,
        predicted_stable: predicted,
        observed_status: r.status.name().into(),
        observed_stable: observed,
        final_rel_error: r.final_rel_error(),
        agrees: predicted == observed,
    }
}

/// Bisect the observed EXTRA stability boundary in `(0, hi]`.
fn extra_onset(s: &Setup, args: &TwoAgentArgs, hi: f64) -> Result<Option<Onset>> {
    let stable = |mu: f64| -> Result<bool> { Ok(is_stable(&simulate(s, Algorithm::Extra, mu, args)?)) };
    if stable(hi)? {
        return Ok(None);
    }
    let mut lo = hi * 1e-3;
    if !stable(lo)? {
        return Ok(None);
    }
    let mut hi = hi;
    while hi - lo > args.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(Onset {
        stable_mu: lo,
        unstable_mu: hi,
        sufficient: (args.a + 1.0) / args.sigma2,
        closed_form: (1.0 + 3.0 * args.a) / (2.0 * args.sigma2),
    }))
}

/// Write both traces, their sidecars and `two_agent.json`.
pub fn cmd_two_agent(args: &TwoAgentArgs, out: &Path) -> Result<TwoAgentReport> {
    let s = setup(args)?;
    let case = two_agent_case(args.a, args.sigma2, args.mu, args.mu_e)?;
    let ed = simulate(&s, Algorithm::ExactDiffusion, args.mu, args)?;
    let ex = simulate(&s, Algorithm::Extra, args.mu_e, args)?;
    for (stem, r) in [("exact_diffusion", &ed), ("extra", &ex)] {
        write_trace_csv(&out.join(format!("{stem}.csv")), &r.trace)?;
        write_json(&out.join(format!("{stem}.status.json")), &StatusSidecar::from_run(r))?;
    }
    let extra_onset = match args.scan_max {
        Some(hi) if hi > 0.0 => extra_onset(&s, args, hi)?,
        Some(_) => return Err(CliError::config("scan_max", "must be positive")),
        None => None,
    };
    let report = TwoAgentReport {
        a: args.a,
        sigma2: args.sigma2,
        delta_disc: case.delta_disc,
        root_mismatch: case.root_mismatch,
        diffusion_predicate: case.diffusion_predicate,
        extra_sufficient_unstable: case.extra_sufficient_unstable,
        exact_diffusion: side(args.mu, &case.e_d, &case.roots_d, case.rho_d, case.diffusion_stable, &ed),
        extra: side(args.mu_e, &case.e_e, &case.roots_e, case.rho_e, case.extra_stable, &ex),
        extra_onset,
    };
    write_json(&out.join("two_agent.json"), &report)?;
    Ok(report)
}
