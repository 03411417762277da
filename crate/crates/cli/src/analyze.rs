//! `analyze`: spectral summary, step-size bounds and eigenstructure verdicts for one matrix.

use std::path::Path;

use exdiff_core::cost::hessian_bounds;
use exdiff_core::graph::{check_balanced, perron_vector, CombinationMatrix};
use exdiff_core::spectral::compute_v;
use exdiff_core::stability::{diffusion_step_bound, eigenstructure_check, extra_step_bound, norm_comparison};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::write_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenReport {
    pub unit_count: usize,
    pub multiset_deviation: f64,
    pub reconstruction_error: f64,
    pub inverse_error: f64,
    pub l_deviation: f64,
    pub invariant_residual: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaReport {
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma21: f64,
    pub sigma22: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub edges: usize,
    pub symmetric: bool,
    pub doubly_stochastic: bool,
    pub balanced: bool,
    pub balance_violation: f64,
    pub perron: Vec<f64>,
    pub p_max: f64,
    pub lambda2: f64,
    #[serde(rename = "lambdaN")]
    pub lambda_n: f64,
    pub rho_a: f64,
    /// `sqrt((1 + λ₂)/2)`.
    pub lambda: Option<f64>,
    /// Single agent: no network terms.
    pub degenerate: bool,
    pub v_zero: bool,
    pub nu: f64,
    pub delta: f64,
    pub k_o: usize,
    /// `model` or `unit` (ν = δ = 1).
    pub curvature_source: &'static str,
    pub alpha_d: Option<f64>,
    pub alpha_e: Option<f64>,
    pub mu_bound_diffusion: Option<f64>,
    pub mu_bound_extra: Option<f64>,
    pub t_d_norm_sq: Option<f64>,
    pub t_e_norm_sq: Option<f64>,
    pub closed_form: Option<f64>,
    pub closed_form_residual: Option<f64>,
    pub norm_strict: Option<bool>,
    pub sigma_diffusion: Option<SigmaReport>,
    pub sigma_extra: Option<SigmaReport>,
    pub eigenstructure: Option<EigenReport>,
    pub diagnostics: Vec<String>,
}

/// Analyze one combination matrix with curvature `(ν, δ, k₀)`.
pub fn analyze_matrix(cm: &CombinationMatrix, nu: f64, delta: f64, k_o: usize, source: &'static str) -> Result<AnalysisReport> {
    let n = cm.n();
    let perron = perron_vector(cm)?;
    let (balanced, balance_violation) = check_balanced(cm, &perron);
    let mut r = AnalysisReport {
        n,
        edges: cm.graph().edge_count(),
        symmetric: cm.is_symmetric(),
        doubly_stochastic: cm.is_doubly_stochastic(),
        balanced,
        balance_violation,
        p_max: perron.p_max(),
        perron: perron.p.clone(),
        lambda2: perron.lambda2,
        lambda_n: perron.lambda_n,
        rho_a: perron.rho_a,
        lambda: None,
        degenerate: n == 1,
        v_zero: false,
        nu,
        delta,
        k_o,
        curvature_source: source,
        alpha_d: None,
        alpha_e: None,
        mu_bound_diffusion: None,
        mu_bound_extra: None,
        t_d_norm_sq: None,
        t_e_norm_sq: None,
        closed_form: None,
        closed_form_residual: None,
        norm_strict: None,
        sigma_diffusion: None,
        sigma_extra: None,
        eigenstructure: None,
        diagnostics: Vec::new(),
    };
    if !balanced {
        r.diagnostics.push(format!(
            "matrix is not balanced (violation {balance_violation:.3e}); V and the step-size bounds are undefined"
        ));
        return Ok(r);
    }
    let v = compute_v(cm, &perron)?;
    r.v_zero = v.v.iter().all(|x| *x == 0.0);
    if n == 1 {
        r.diagnostics.push("single agent: V = 0 and no network bound applies".into());
        return Ok(r);
    }
    let tau = vec![1.0; n];
    let bd = diffusion_step_bound(cm, &perron, &tau, nu, delta, k_o)?;
    r.lambda = Some(bd.lambda);
    r.alpha_d = Some(bd.alpha);
    r.mu_bound_diffusion = Some(bd.mu_bound);
    r.t_d_norm_sq = Some(bd.norm_t * bd.norm_t);
    r.sigma_diffusion =
        Some(SigmaReport { sigma11: bd.sigma11, sigma12: bd.sigma12, sigma21: bd.sigma21, sigma22: bd.sigma22, c: bd.c });
    if r.symmetric && r.doubly_stochastic {
        let be = extra_step_bound(cm, nu, delta)?;
        let nc = norm_comparison(cm)?;
        r.alpha_e = Some(be.alpha);
        r.mu_bound_extra = Some(be.mu_bound);
        r.t_d_norm_sq = Some(nc.t_d_sq);
        r.t_e_norm_sq = Some(nc.t_e_sq);
        r.closed_form = Some(nc.closed_form);
        r.closed_form_residual = Some(nc.residual);
        r.norm_strict = Some(nc.strict);
        r.sigma_extra =
            Some(SigmaReport { sigma11: be.sigma11, sigma12: be.sigma12, sigma21: be.sigma21, sigma22: be.sigma22, c: be.c });
    } else {
        r.diagnostics.push("matrix is not symmetric doubly-stochastic; EXTRA quantities omitted".into());
    }
    let ec = eigenstructure_check(cm, &perron)?;
    r.eigenstructure = Some(EigenReport {
        unit_count: ec.unit_count,
        multiset_deviation: ec.multiset_deviation,
        reconstruction_error: ec.reconstruction_error,
        inverse_error: ec.inverse_error,
        l_deviation: ec.l_deviation,
        invariant_residual: ec.invariant_residual,
        passes: ec.passes(),
    });
    Ok(r)
}

/// Build the configured matrix, analyze it and write `analysis.json`.
pub fn cmd_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<AnalysisReport> {
    let graph = cfg.build_graph()?;
    let cm = cfg.build_matrix(&graph)?;
    let report = match &cfg.model {
        Some(_) => {
            let model = cfg.build_model()?;
            let hb = hessian_bounds(&model)?;
            analyze_matrix(&cm, hb.nu, hb.delta, hb.k_o, "model")?
        }
        None => analyze_matrix(&cm, 1.0, 1.0, 0, "unit")?,
    };
    write_json(&out.join("analysis.json"), &report)?;
    Ok(report)
}
