//! Iteration engines: exact diffusion (three forms), EXTRA, DIGing, Aug-DGM.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::cost::CostModel;
use crate::error::invalid;
use crate::graph::{check_balanced, perron_vector, CombinationMatrix, PerronData};
use crate::spectral::{compute_v, VMatrix};
use crate::{Error, Result};

/// Relative error above which a run is declared diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Adapt-correct-combine form.
    ExactDiffusion,
    /// Primal-dual form with the dual iterate `Y`.
    ExactDiffusionPrimalDual,
    /// Online Perron estimation of the step-size scaling.
    ExactDiffusionAdaptive,
    Extra,
    Diging,
    AugDgm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::ExactDiffusion,
        Algorithm::ExactDiffusionPrimalDual,
        Algorithm::ExactDiffusionAdaptive,
        Algorithm::Extra,
        Algorithm::Diging,
        Algorithm::AugDgm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ExactDiffusion => "exact_diffusion",
            Algorithm::ExactDiffusionPrimalDual => "exact_diffusion_pd",
            Algorithm::ExactDiffusionAdaptive => "exact_diffusion_adaptive",
            Algorithm::Extra => "extra",
            Algorithm::Diging => "diging",
            Algorithm::AugDgm => "aug_dgm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == s)
    }

    /// Communication units charged per iteration.
    pub fn comm_per_iteration(self) -> usize {
        match self {
            Algorithm::ExactDiffusion | Algorithm::ExactDiffusionPrimalDual | Algorithm::Extra => 1,
            Algorithm::ExactDiffusionAdaptive | Algorithm::Diging | Algorithm::AugDgm => 2,
        }
    }

    fn is_exact_diffusion(self) -> bool {
        matches!(
            self,
            Algorithm::ExactDiffusion | Algorithm::ExactDiffusionPrimalDual | Algorithm::ExactDiffusionAdaptive
        )
    }
}

/// Per-agent step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub mu: Vec<f64>,
    pub mu_o: f64,
    /// Scalar with `q = β · diag(μ) · p`.
    pub beta: f64,
}

impl StepSizes {
    pub fn uniform(n: usize, mu: f64) -> Self {
        StepSizes { mu: vec![mu; n], mu_o: mu, beta: 1.0 / mu }
    }

    /// `μ_k = q_k μ_o / p_k`.
    pub fn from_weights(q: &[f64], p: &[f64], mu_o: f64) -> Result<Self> {
        if q.len() != p.len() {
            return Err(invalid!("{} weights for {} agents", q.len(), p.len()));
        }
        if !(mu_o > 0.0) {
            return Err(invalid!("mu_o must be positive, got {mu_o}"));
        }
        let mu = q.iter().zip(p).map(|(qk, pk)| qk * mu_o / pk).collect();
        Ok(StepSizes { mu, mu_o, beta: 1.0 / mu_o })
    }

    pub fn max(&self) -> f64 {
        self.mu.iter().copied().fold(0.0, f64::max)
    }

    /// `τ_k = μ_k / μ_max`.
    pub fn ratios(&self) -> Vec<f64> {
        let m = self.max();
        self.mu.iter().map(|x| x / m).collect()
    }
}

/// Step-size request as it appears in configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSpec {
    /// Scalar step; the adaptive engine reads it as `μ_o` with the model's `q`.
    Uniform(f64),
    PerAgent(Vec<f64>),
    /// `μ_k = q_k μ_o / p_k`.
    Weighted { q: Vec<f64>, mu_o: f64 },
}

/// Iterates of one engine.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    pub w: DMatrix<f64>,
    pub psi_prev: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub g_prev: DMatrix<f64>,
    /// Power-iteration state of the adaptive engine; row `k` is `z_kᵀ`.
    pub z: Option<DMatrix<f64>>,
    pub iteration: usize,
    pub comm_units: usize,
}

impl AlgorithmState {
    /// Start from `w` with `ψ_{−1} = w`, `y_{−1} = 0`.
    pub fn new(w: DMatrix<f64>) -> Self {
        let (n, m) = w.shape();
        AlgorithmState {
            psi_prev: w.clone(),
            y: DMatrix::zeros(n, m),
            g_prev: DMatrix::zeros(n, m),
            z: None,
            w,
            iteration: 0,
            comm_units: 0,
        }
    }

    /// Gradient-tracking start: `y_0 = ∇J(W_0)`.
    pub fn tracking(w: DMatrix<f64>, model: &CostModel) -> Self {
        let mut s = Self::new(w);
        s.g_prev = model.gradients(&s.w);
        s.y = s.g_prev.clone();
        s
    }

    /// Power-iteration start: `Z_{−1} = I`.
    pub fn adaptive(w: DMatrix<f64>) -> Self {
        let n = w.nrows();
        let mut s = Self::new(w);
        s.z = Some(DMatrix::identity(n, n));
        s
    }

    fn finish(&mut self, comm: usize) -> Result<()> {
        self.iteration += 1;
        self.comm_units += comm;
        if self.w.iter().chain(self.y.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Diverged(self.iteration));
        }
        Ok(())
    }
}

fn scale_rows(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (k, sk) in s.iter().enumerate() {
        out.row_mut(k).scale_mut(*sk);
    }
    out
}

/// One adapt-correct-combine step; `a_bar` is `Ā = (I + A)/2`.
pub fn exact_diffusion_step(st: &mut AlgorithmState, model: &CostModel, a_bar: &DMatrix<f64>, mu: &[f64]) -> Result<()> {
    let g = model.gradients(&st.w);
    let psi = &st.w - scale_rows(&g, mu);
    let phi = &psi + &st.w - &st.psi_prev;
    st.w = a_bar.tr_mul(&phi);
    st.psi_prev = psi;
    st.finish(1)
}

/// Matrices used by the primal-dual recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualOperators {
    pub a_bar: DMatrix<f64>,
    /// `P⁻¹ V`.
    pub p_inv_v: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl PrimalDualOperators {
    pub fn new(cm: &CombinationMatrix, p: &PerronData, v: &VMatrix) -> Self {
        let p_inv = DMatrix::from_diagonal(&DVector::from_iterator(cm.n(), p.p.iter().map(|x| 1.0 / x)));
        PrimalDualOperators { a_bar: cm.a_bar(), p_inv_v: p_inv * &v.v, v: v.v.clone() }
    }
}

/// `𝒲_i = Āᵀ(𝒲 − ℳ∇𝒥(𝒲)) − P⁻¹V𝒴`, `𝒴_i = 𝒴 + V𝒲_i`.
pub fn exact_diffusion_primal_dual_step(
    st: &mut AlgorithmState,
    model: &CostModel,
    ops: &PrimalDualOperators,
    mu: &[f64],
) -> Result<()> {
    let g = model.gradients(&st.w);
    let inner = &st.w - scale_rows(&g, mu);
    st.w = ops.a_bar.tr_mul(&inner) - &ops.p_inv_v * &st.y;
    st.y += &ops.v * &st.w;
    st.finish(1)
}

/// Algorithm with online Perron estimates: one power-iteration round, then
/// an adapt-correct-combine step with `μ_{k,i} = q_k μ_o / z_{k,i}(k)`.
pub fn exact_diffusion_adaptive_step(
    st: &mut AlgorithmState,
    model: &CostModel,
    a: &DMatrix<f64>,
    a_bar: &DMatrix<f64>,
    mu_o: f64,
    q: &[f64],
) -> Result<Vec<f64>> {
    let z = st.z.as_ref().ok_or_else(|| invalid!("adaptive step needs a power-iteration state"))?;
    let z = a.tr_mul(z);
    let n = z.nrows();
    let mut mu = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let zk = z[(k, k)];
        if !(zk > 0.0) {
            return Err(Error::Degenerate { agent: k, iteration: st.iteration });
        }
        diag[k] = zk;
        mu[k] = q[k] * mu_o / zk;
    }
    st.z = Some(z);
    exact_diffusion_step(st, model, a_bar, &mu)?;
    st.comm_units += 1;
    Ok(diag)
}

/// `𝒲_i = Ā𝒲 − μ∇𝒥(𝒲) − P⁻¹V𝒴`, `𝒴_i = 𝒴 + V𝒲_i`.
pub fn extra_step(st: &mut AlgorithmState, model: &CostModel, ops: &PrimalDualOperators, mu: f64) -> Result<()> {
    let g = model.gradients(&st.w);
    st.w = &ops.a_bar * &st.w - g * mu - &ops.p_inv_v * &st.y;
    st.y += &ops.v * &st.w;
    st.finish(1)
}

/// `𝒲_i = Aᵀ𝒲 − μ𝒴`, `𝒴_i = Aᵀ𝒴 + ∇𝒥(𝒲_i) − ∇𝒥(𝒲)`.
pub fn diging_step(st: &mut AlgorithmState, model: &CostModel, a: &DMatrix<f64>, mu: f64) -> Result<()> {
    st.w = a.tr_mul(&st.w) - &st.y * mu;
    let g = model.gradients(&st.w);
    st.y = a.tr_mul(&st.y) + &g - &st.g_prev;
    st.g_prev = g;
    st.finish(2)
}

/// `𝒲_i = Aᵀ(𝒲 − diag(μ)𝒴)`, `𝒴_i = Aᵀ(𝒴 + ∇𝒥(𝒲_i) − ∇𝒥(𝒲))`.
pub fn aug_dgm_step(st: &mut AlgorithmState, model: &CostModel, a: &DMatrix<f64>, mu: &[f64]) -> Result<()> {
    st.w = a.tr_mul(&(&st.w - scale_rows(&st.y, mu)));
    let g = model.gradients(&st.w);
    st.y = a.tr_mul(&(&st.y + &g - &st.g_prev));
    st.g_prev = g;
    st.finish(2)
}

/// A configured engine owning its state.
#[derive(Debug, Clone)]
pub struct Engine {
    kind: Algorithm,
    a: DMatrix<f64>,
    ops: Option<PrimalDualOperators>,
    perron: PerronData,
    v: Option<VMatrix>,
    steps: StepSizes,
    q: Vec<f64>,
    state: AlgorithmState,
}

impl Engine {
    /// Validate preconditions and initialize from `w_init` (N×M).
    pub fn new(
        kind: Algorithm,
        model: &CostModel,
        cm: &CombinationMatrix,
        spec: &StepSpec,
        w_init: DMatrix<f64>,
    ) -> Result<Self> {
        let n = cm.n();
        if model.n_agents() != n {
            return Err(invalid!("model has {} agents, matrix has {}", model.n_agents(), n));
        }
        if w_init.shape() != (n, model.dim()) {
            return Err(invalid!("initial iterate is {}x{}, expected {}x{}", w_init.nrows(), w_init.ncols(), n, model.dim()));
        }
        let perron = perron_vector(cm)?;
        let steps = match spec {
            StepSpec::Uniform(mu) if kind == Algorithm::ExactDiffusionAdaptive => {
                StepSizes::from_weights(model.q(), &perron.p, *mu)?
            }
            StepSpec::Uniform(mu) => StepSizes::uniform(n, *mu),
            StepSpec::PerAgent(mu) => {
                if mu.len() != n {
                    return Err(invalid!("{} step sizes for {} agents", mu.len(), n));
                }
                let mu_o = mu.iter().copied().fold(0.0, f64::max);
                StepSizes { mu: mu.clone(), mu_o, beta: 1.0 / mu_o }
            }
            StepSpec::Weighted { q, mu_o } => StepSizes::from_weights(q, &perron.p, *mu_o)?,
        };
        if steps.mu.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(invalid!("step sizes must be positive and finite"));
        }
        let q = match spec {
            StepSpec::Weighted { q, .. } => q.clone(),
            _ => model.q().to_vec(),
        };
        match kind {
            Algorithm::Extra | Algorithm::Diging => {
                if !matches!(spec, StepSpec::Uniform(_)) {
                    return Err(invalid!("{} needs a scalar step size", kind.name()));
                }
            }
            Algorithm::ExactDiffusionAdaptive => {
                if matches!(spec, StepSpec::PerAgent(_)) {
                    return Err(invalid!("{} needs a scalar step or (q, mu_o)", kind.name()));
                }
            }
            _ => {}
        }
        match kind {
            Algorithm::Extra => {
                if !cm.is_symmetric() || !cm.is_doubly_stochastic() {
                    return Err(invalid!("extra needs a symmetric doubly-stochastic matrix"));
                }
            }
            Algorithm::Diging | Algorithm::AugDgm => {
                if !cm.is_doubly_stochastic() {
                    return Err(invalid!("{} needs a doubly-stochastic matrix", kind.name()));
                }
            }
            _ => {
                let (ok, viol) = check_balanced(cm, &perron);
                if !ok {
                    return Err(Error::NotBalanced(viol));
                }
            }
        }
        let (ops, v) = match kind {
            Algorithm::ExactDiffusionPrimalDual | Algorithm::Extra => {
                let v = compute_v(cm, &perron)?;
                (Some(PrimalDualOperators::new(cm, &perron, &v)), Some(v))
            }
            _ => (None, None),
        };
        let state = match kind {
            Algorithm::Diging | Algorithm::AugDgm => AlgorithmState::tracking(w_init, model),
            Algorithm::ExactDiffusionAdaptive => AlgorithmState::adaptive(w_init),
            _ => AlgorithmState::new(w_init),
        };
        Ok(Engine { kind, a: cm.matrix().clone(), ops, perron, v, steps, q, state })
    }

    pub fn kind(&self) -> Algorithm {
        self.kind
    }

    pub fn state(&self) -> &AlgorithmState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut AlgorithmState {
        &mut self.state
    }

    pub fn steps(&self) -> &StepSizes {
        &self.steps
    }

    pub fn perron(&self) -> &PerronData {
        &self.perron
    }

    pub fn v(&self) -> Option<&VMatrix> {
        self.v.as_ref()
    }

    /// Weights `t` of the aggregate this engine minimizes, scaled so `Σt = Σq`.
    pub fn target_weights(&self, model: &CostModel) -> Vec<f64> {
        let total: f64 = model.q().iter().sum();
        let n = model.n_agents();
        match self.kind {
            Algorithm::ExactDiffusion | Algorithm::ExactDiffusionPrimalDual => {
                let raw: Vec<f64> = self.perron.p.iter().zip(&self.steps.mu).map(|(p, m)| p * m).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x * total / s).collect()
            }
            Algorithm::ExactDiffusionAdaptive => {
                let s: f64 = self.q.iter().sum();
                self.q.iter().map(|x| x * total / s).collect()
            }
            _ => vec![total / n as f64; n],
        }
    }

    /// Advance one iteration; returns the Perron estimates for the adaptive engine.
    pub fn step(&mut self, model: &CostModel) -> Result<Option<Vec<f64>>> {
        let st = &mut self.state;
        match self.kind {
            Algorithm::ExactDiffusion => {
                let a_bar = (DMatrix::identity(self.a.nrows(), self.a.nrows()) + &self.a) * 0.5;
                exact_diffusion_step(st, model, &a_bar, &self.steps.mu)?;
            }
            Algorithm::ExactDiffusionPrimalDual => {
                exact_diffusion_primal_dual_step(st, model, self.ops.as_ref().unwrap(), &self.steps.mu)?;
            }
            Algorithm::ExactDiffusionAdaptive => {
                let a_bar = (DMatrix::identity(self.a.nrows(), self.a.nrows()) + &self.a) * 0.5;
                let d = exact_diffusion_adaptive_step(st, model, &self.a, &a_bar, self.steps.mu_o, &self.q)?;
                return Ok(Some(d));
            }
            Algorithm::Extra => extra_step(st, model, self.ops.as_ref().unwrap(), self.steps.mu[0])?,
            Algorithm::Diging => diging_step(st, model, &self.a, self.steps.mu[0])?,
            Algorithm::AugDgm => aug_dgm_step(st, model, &self.a, &self.steps.mu)?,
        }
        Ok(None)
    }

    /// Overwrite the state with this engine's fixed point at `w_star`.
    pub fn seed_fixed_point(&mut self, model: &CostModel, w_star: &DVector<f64>) {
        let n = model.n_agents();
        let w = DMatrix::from_fn(n, model.dim(), |_, j| w_star[j]);
        let g = model.gradients(&w);
        let mut st = AlgorithmState::new(w.clone());
        match self.kind {
            Algorithm::ExactDiffusion | Algorithm::ExactDiffusionAdaptive => {
                st.psi_prev = &w - scale_rows(&g, &self.steps.mu);
                if self.kind == Algorithm::ExactDiffusionAdaptive {
                    st.z = Some(DMatrix::from_fn(n, n, |_, l| self.perron.p[l]));
                }
            }
            Algorithm::ExactDiffusionPrimalDual | Algorithm::Extra => {
                st.y = self.dual_fixed_point(&g);
            }
            Algorithm::Diging | Algorithm::AugDgm => {
                st.g_prev = g;
            }
        }
        self.state = st;
    }

    /// `Y*` in the range of `V` for the primal-dual engines, given `∇𝒥(𝒲*)`.
    pub fn dual_fixed_point(&self, g_star: &DMatrix<f64>) -> DMatrix<f64> {
        let (Some(ops), Some(v)) = (&self.ops, &self.v) else {
            return DMatrix::zeros(g_star.nrows(), g_star.ncols());
        };
        let pm = self.perron.diag();
        let rhs = match self.kind {
            Algorithm::Extra => -(&pm * g_star) * self.steps.mu[0],
            _ => -(&pm * ops.a_bar.tr_mul(&scale_rows(g_star, &self.steps.mu))),
        };
        v.pinv() * rhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    Exhausted,
    Diverged,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Exhausted => "exhausted",
            Status::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub comm_units: usize,
    pub rel_error: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub max_iters: usize,
    /// Stop once `rel_error ≤ stop`.
    pub stop: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub trace: Vec<TraceRecord>,
    pub status: Status,
    pub w_final: DMatrix<f64>,
    /// Minimizer the relative error is measured against.
    pub reference: DVector<f64>,
    /// `z_{k,i}(k)` per iteration (adaptive engine only).
    pub perron_estimates: Vec<Vec<f64>>,
    /// `max_m |1ᵀ𝒴_i(:, m)| / N` per recorded iteration.
    pub dual_mean: Vec<f64>,
}

impl RunResult {
    pub fn final_rel_error(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.rel_error)
    }

    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iteration)
    }
}

fn dual_mean(y: &DMatrix<f64>) -> f64 {
    let n = y.nrows() as f64;
    (0..y.ncols()).map(|j| y.column(j).sum().abs() / n).fold(0.0, f64::max)
}

/// Iterate an engine, recording one trace row per iteration (row 0 is the start).
pub fn run_engine(engine: &mut Engine, model: &CostModel, reference: &DVector<f64>, cfg: &RunConfig) -> RunResult {
    let t = engine.target_weights(model);
    let n = model.n_agents();
    let w_ref = DMatrix::from_fn(n, model.dim(), |_, j| reference[j]);
    let e0 = (&engine.state().w - &w_ref).norm_squared();
    let measure = |st: &AlgorithmState| -> TraceRecord {
        let e = (&st.w - &w_ref).norm_squared();
        let rel = if e0 > 0.0 { e / e0 } else { e };
        let avg = DVector::from_fn(model.dim(), |j, _| st.w.column(j).mean());
        TraceRecord {
            iteration: st.iteration,
            comm_units: st.comm_units,
            rel_error: rel,
            grad_norm: model.weighted_gradient(&t, &avg).norm(),
        }
    };
    let mut trace = vec![measure(engine.state())];
    let mut duals = vec![dual_mean(&engine.state().y)];
    let mut estimates = Vec::new();
    let status = loop {
        let last = *trace.last().unwrap();
        if !last.rel_error.is_finite() || last.rel_error > DIVERGENCE_THRESHOLD {
            break Status::Diverged;
        }
        if last.rel_error <= cfg.stop {
            break Status::Converged;
        }
        if last.iteration >= cfg.max_iters {
            break Status::Exhausted;
        }
        match engine.step(model) {
            Ok(d) => {
                if let Some(d) = d {
                    estimates.push(d);
                }
                trace.push(measure(engine.state()));
                duals.push(dual_mean(&engine.state().y));
            }
            Err(_) => {
                let st = engine.state();
                trace.push(TraceRecord {
                    iteration: st.iteration,
                    comm_units: st.comm_units,
                    rel_error: f64::INFINITY,
                    grad_norm: f64::INFINITY,
                });
                break Status::Diverged;
            }
        }
    };
    RunResult {
        algorithm: engine.kind(),
        trace,
        status,
        w_final: engine.state().w.clone(),
        reference: reference.clone(),
        perron_estimates: estimates,
        dual_mean: duals,
    }
}

/// Build an engine, solve for its reference minimizer and run it.
///
/// `w_init` defaults to zeros.
pub fn run(
    kind: Algorithm,
    model: &CostModel,
    cm: &CombinationMatrix,
    spec: &StepSpec,
    w_init: Option<DMatrix<f64>>,
    cfg: &RunConfig,
) -> Result<RunResult> {
    let w0 = w_init.unwrap_or_else(|| DMatrix::zeros(model.n_agents(), model.dim()));
    let mut engine = Engine::new(kind, model, cm, spec, w0)?;
    let t = engine.target_weights(model);
    let (reference, _) = model.minimize_weighted(&t)?;
    Ok(run_engine(&mut engine, model, &reference, cfg))
}

/// True for engines that run on any balanced matrix (not only doubly-stochastic ones).
pub fn accepts_balanced(kind: Algorithm) -> bool {
    kind.is_exact_diffusion()
}
