//! Per-agent cost functions, curvature constants and centralized solutions.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::invalid;
use crate::linalg::{is_symmetric, sym_eigen};
use crate::{Error, Result};

/// Label-flip probability used by [`logistic_model`].
pub const DEFAULT_LABEL_NOISE: f64 = 0.1;

/// One agent's private cost.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentCost {
    /// `½ wᵀ H w − bᵀ w + c`.
    Quadratic { h: DMatrix<f64>, b: DVector<f64>, c: f64 },
    /// `(1/L) Σ ln(1 + exp(−γ_ℓ h_ℓᵀ w)) + (ρ/2)‖w‖²`, features stored as rows.
    Logistic { features: DMatrix<f64>, labels: DVector<f64>, ridge: f64 },
}

/// How a model was produced; enough to rebuild it bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelOrigin {
    LeastSquares { seed: u64, samples: usize },
    Logistic { seed: u64, samples: usize, ridge: f64, label_noise: f64 },
    MseQuadratic { covariances: Vec<DMatrix<f64>>, cross: Vec<DVector<f64>> },
}

impl ModelOrigin {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelOrigin::LeastSquares { .. } => "least_squares",
            ModelOrigin::Logistic { .. } => "logistic",
            ModelOrigin::MseQuadratic { .. } => "mse_quadratic",
        }
    }
}

/// A network of private costs with aggregation weights `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    dim: usize,
    agents: Vec<AgentCost>,
    q: Vec<f64>,
    origin: ModelOrigin,
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn check_sizes(n_agents: usize, dim: usize, samples: usize) -> Result<()> {
    if n_agents == 0 || dim == 0 || samples == 0 {
        return Err(invalid!("agents, dimension and samples must be positive"));
    }
    Ok(())
}

/// `J_k(w) = ½‖U_k w − d_k‖²` with standard-normal `U_k` (samples×dim) and `d_k`.
pub fn least_squares_model(seed: u64, n_agents: usize, dim: usize, samples: usize) -> Result<CostModel> {
    check_sizes(n_agents, dim, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = (0..n_agents)
        .map(|_| {
            let u = normal_matrix(&mut rng, samples, dim);
            let d = normal_vector(&mut rng, samples);
            AgentCost::Quadratic { h: u.transpose() * &u, b: u.transpose() * &d, c: 0.5 * d.norm_squared() }
        })
        .collect();
    Ok(CostModel { dim, agents, q: vec![1.0; n_agents], origin: ModelOrigin::LeastSquares { seed, samples } })
}

/// Regularized logistic regression with labels from a planted vector.
pub fn logistic_model(seed: u64, n_agents: usize, dim: usize, samples: usize, ridge: f64) -> Result<CostModel> {
    logistic_model_with_noise(seed, n_agents, dim, samples, ridge, DEFAULT_LABEL_NOISE)
}

/// [`logistic_model`] with an explicit label-flip probability.
pub fn logistic_model_with_noise(
    seed: u64,
    n_agents: usize,
    dim: usize,
    samples: usize,
    ridge: f64,
    label_noise: f64,
) -> Result<CostModel> {
    check_sizes(n_agents, dim, samples)?;
    if !(ridge > 0.0) || !ridge.is_finite() {
        return Err(invalid!("ridge must be positive, got {ridge}"));
    }
    if !(0.0..=0.5).contains(&label_noise) {
        return Err(invalid!("label noise {label_noise} not in [0, 0.5]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted = normal_vector(&mut rng, dim);
    let agents = (0..n_agents)
        .map(|_| {
            let features = normal_matrix(&mut rng, samples, dim);
            let labels = DVector::from_fn(samples, |l, _| {
                let clean = if features.row(l).dot(&planted.transpose()) >= 0.0 { 1.0 } else { -1.0 };
                if rng.gen::<f64>() < label_noise {
                    -clean
                } else {
                    clean
                }
            });
            AgentCost::Logistic { features, labels, ridge }
        })
        .collect();
    Ok(CostModel {
        dim,
        agents,
        q: vec![1.0; n_agents],
        origin: ModelOrigin::Logistic { seed, samples, ridge, label_noise },
    })
}

/// `J_k(w) = ½(wᵀ R_k w − 2 r_kᵀ w)`.
pub fn mse_quadratic_model(covariances: Vec<DMatrix<f64>>, cross: Vec<DVector<f64>>) -> Result<CostModel> {
    let n = covariances.len();
    if n == 0 || cross.len() != n {
        return Err(invalid!("need one covariance and one cross vector per agent"));
    }
    let dim = covariances[0].nrows();
    for (k, (r, x)) in covariances.iter().zip(&cross).enumerate() {
        if r.shape() != (dim, dim) || x.len() != dim {
            return Err(invalid!("agent {k}: dimension mismatch"));
        }
        if !is_symmetric(r, 1e-12 * r.amax().max(1.0)) {
            return Err(invalid!("agent {k}: covariance is not symmetric"));
        }
        if sym_eigen(r).0[dim - 1] < -1e-10 * r.amax().max(1.0) {
            return Err(invalid!("agent {k}: covariance is not positive semidefinite"));
        }
    }
    let sum: DMatrix<f64> = covariances.iter().fold(DMatrix::zeros(dim, dim), |s, r| s + r);
    if sym_eigen(&sum).0[dim - 1] <= 0.0 {
        return Err(invalid!("sum of covariances is not positive definite"));
    }
    let agents = covariances
        .iter()
        .zip(&cross)
        .map(|(r, x)| AgentCost::Quadratic { h: r.clone(), b: x.clone(), c: 0.0 })
        .collect();
    Ok(CostModel { dim, agents, q: vec![1.0; n], origin: ModelOrigin::MseQuadratic { covariances, cross } })
}

/// Random SPD covariances with eigenvalues drawn uniformly from `[lo, hi]`
/// and cross terms uniform in `[-1, 1]`.
pub fn random_quadratic_model(seed: u64, n_agents: usize, dim: usize, lo: f64, hi: f64) -> Result<CostModel> {
    check_sizes(n_agents, dim, 1)?;
    if !(lo > 0.0 && hi >= lo) {
        return Err(invalid!("eigenvalue range [{lo}, {hi}] must be positive and ordered"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covs = Vec::with_capacity(n_agents);
    let mut cross = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let q = normal_matrix(&mut rng, dim, dim).qr().q();
        let d = DVector::from_fn(dim, |_, _| lo + (hi - lo) * rng.gen::<f64>());
        let h = &q * DMatrix::from_diagonal(&d) * q.transpose();
        covs.push((&h + h.transpose()) * 0.5);
        cross.push(DVector::from_fn(dim, |_, _| 2.0 * rng.gen::<f64>() - 1.0));
    }
    mse_quadratic_model(covs, cross)
}

/// Identical bowls `R_k = σ² I`, `r_k = σ² w°` for every agent.
pub fn isotropic_mse_model(n_agents: usize, sigma2: f64, w_o: &[f64]) -> Result<CostModel> {
    if !(sigma2 > 0.0) {
        return Err(invalid!("sigma² must be positive, got {sigma2}"));
    }
    let m = w_o.len();
    let r = DMatrix::identity(m, m) * sigma2;
    let x = DVector::from_column_slice(w_o) * sigma2;
    mse_quadratic_model(vec![r; n_agents], vec![x; n_agents])
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl AgentCost {
    pub fn value(&self, w: &DVector<f64>) -> f64 {
        match self {
            AgentCost::Quadratic { h, b, c } => 0.5 * w.dot(&(h * w)) - b.dot(w) + c,
            AgentCost::Logistic { features, labels, ridge } => {
                let z = features * w;
                let l = labels.len() as f64;
                let data: f64 = z.iter().zip(labels.iter()).map(|(zi, g)| softplus(-g * zi)).sum();
                data / l + 0.5 * ridge * w.norm_squared()
            }
        }
    }

    /// Gradient written into `out` (length `dim`).
    pub fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        match self {
            AgentCost::Quadratic { h, b, .. } => {
                let m = b.len();
                for i in 0..m {
                    let mut s = -b[i];
                    for j in 0..m {
                        s += h[(i, j)] * w[j];
                    }
                    out[i] = s;
                }
            }
            AgentCost::Logistic { features, labels, ridge } => {
                let (l, m) = features.shape();
                for i in 0..m {
                    out[i] = ridge * w[i];
                }
                let inv = 1.0 / l as f64;
                for s in 0..l {
                    let mut z = 0.0;
                    for j in 0..m {
                        z += features[(s, j)] * w[j];
                    }
                    let g = labels[s];
                    let coef = -g * sigmoid(-g * z) * inv;
                    for j in 0..m {
                        out[j] += coef * features[(s, j)];
                    }
                }
            }
        }
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(w.len());
        self.gradient_into(w.as_slice(), out.as_mut_slice());
        out
    }

    pub fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        match self {
            AgentCost::Quadratic { h, .. } => h.clone(),
            AgentCost::Logistic { features, labels, ridge } => {
                let (l, m) = features.shape();
                let mut hess = DMatrix::identity(m, m) * *ridge;
                for s in 0..l {
                    let row = features.row(s).transpose();
                    let sg = sigmoid(labels[s] * row.dot(w));
                    hess += &row * row.transpose() * (sg * (1.0 - sg) / l as f64);
                }
                hess
            }
        }
    }

    /// Global upper curvature bound of this agent.
    pub fn curvature_upper(&self) -> f64 {
        match self {
            AgentCost::Quadratic { h, .. } => sym_eigen(h).0[0],
            AgentCost::Logistic { features, ridge, .. } => {
                let l = features.nrows() as f64;
                ridge + sym_eigen(&(features.transpose() * features / (4.0 * l))).0[0]
            }
        }
    }

    /// Global lower curvature bound of this agent.
    pub fn curvature_lower(&self) -> f64 {
        match self {
            AgentCost::Quadratic { h, .. } => *sym_eigen(h).0.last().unwrap(),
            AgentCost::Logistic { ridge, .. } => *ridge,
        }
    }
}

/// Minimizers of the weighted and the uniform aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w_star: DVector<f64>,
    pub w_o: DVector<f64>,
    /// `‖Σ q_k ∇J_k(w_star)‖`.
    pub solver_residual: f64,
}

/// Curvature constants `(ν, δ, k₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianBounds {
    pub nu: f64,
    pub delta: f64,
    pub k_o: usize,
}

impl CostModel {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn agents(&self) -> &[AgentCost] {
        &self.agents
    }

    pub fn agent(&self, k: usize) -> &AgentCost {
        &self.agents[k]
    }

    pub fn origin(&self) -> &ModelOrigin {
        &self.origin
    }

    pub fn is_quadratic(&self) -> bool {
        self.agents.iter().all(|a| matches!(a, AgentCost::Quadratic { .. }))
    }

    /// Replace the aggregation weights (positive, one per agent).
    pub fn with_weights(mut self, q: Vec<f64>) -> Result<Self> {
        if q.len() != self.n_agents() {
            return Err(invalid!("{} weights for {} agents", q.len(), self.n_agents()));
        }
        if q.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(invalid!("weights must be positive and finite"));
        }
        self.q = q;
        Ok(self)
    }

    /// Row `k` of the result is `∇J_k(w_k)ᵀ`, where `w_k` is row `k` of `w`.
    pub fn gradients_into(&self, w: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let m = self.dim;
        let mut wk = vec![0.0; m];
        let mut gk = vec![0.0; m];
        for (k, agent) in self.agents.iter().enumerate() {
            for j in 0..m {
                wk[j] = w[(k, j)];
            }
            agent.gradient_into(&wk, &mut gk);
            for j in 0..m {
                out[(k, j)] = gk[j];
            }
        }
    }

    pub fn gradients(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_agents(), self.dim);
        self.gradients_into(w, &mut out);
        out
    }

    /// `Σ t_k J_k(w)`.
    pub fn weighted_value(&self, t: &[f64], w: &DVector<f64>) -> f64 {
        self.agents.iter().zip(t).map(|(a, tk)| tk * a.value(w)).sum()
    }

    /// `Σ t_k ∇J_k(w)`.
    pub fn weighted_gradient(&self, t: &[f64], w: &DVector<f64>) -> DVector<f64> {
        self.agents.iter().zip(t).fold(DVector::zeros(self.dim), |s, (a, tk)| s + a.gradient(w) * *tk)
    }

    /// Constant Hessians of a quadratic model.
    pub fn constant_hessians(&self) -> Option<Vec<DMatrix<f64>>> {
        self.agents
            .iter()
            .map(|a| match a {
                AgentCost::Quadratic { h, .. } => Some(h.clone()),
                _ => None,
            })
            .collect()
    }

    /// Minimizer of `Σ t_k J_k`.
    pub fn minimize_weighted(&self, t: &[f64]) -> Result<(DVector<f64>, f64)> {
        if t.len() != self.n_agents() {
            return Err(invalid!("{} weights for {} agents", t.len(), self.n_agents()));
        }
        if self.is_quadratic() {
            let m = self.dim;
            let mut h = DMatrix::zeros(m, m);
            let mut b = DVector::zeros(m);
            for (a, tk) in self.agents.iter().zip(t) {
                if let AgentCost::Quadratic { h: hk, b: bk, .. } = a {
                    h += hk * *tk;
                    b += bk * *tk;
                }
            }
            let w = h
                .clone()
                .cholesky()
                .map(|c| c.solve(&b))
                .or_else(|| h.lu().solve(&b))
                .ok_or_else(|| Error::Assumption("aggregate Hessian is singular".into()))?;
            let resid = self.weighted_gradient(t, &w).norm();
            return Ok((w, resid));
        }
        self.newton(t)
    }

    fn newton(&self, t: &[f64]) -> Result<(DVector<f64>, f64)> {
        const CAP: usize = 200;
        let m = self.dim;
        let mut w = DVector::zeros(m);
        let mut f = self.weighted_value(t, &w);
        let mut g = self.weighted_gradient(t, &w);
        let mut it = 0;
        while it < CAP && g.norm() > 1e-13 {
            let h = self.agents.iter().zip(t).fold(DMatrix::zeros(m, m), |s, (a, tk)| s + a.hessian(&w) * *tk);
            let dir = h
                .cholesky()
                .map(|c| c.solve(&g))
                .ok_or_else(|| Error::Assumption("aggregate Hessian is not positive definite".into()))?;
            let slope = g.dot(&dir);
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &w - &dir * step;
                let fc = self.weighted_value(t, &cand);
                if fc <= f - 1e-4 * step * slope {
                    w = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            g = self.weighted_gradient(t, &w);
            it += 1;
            if !moved {
                break;
            }
        }
        let resid = g.norm();
        if resid > 1e-8 {
            return Err(Error::Convergence { residual: resid, iterations: it });
        }
        Ok((w, resid))
    }
}

/// Weighted solution `w*` (weights `q`) and uniform solution `w°`.
pub fn solve_centralized(model: &CostModel) -> Result<GroundTruth> {
    let (w_star, solver_residual) = model.minimize_weighted(&model.q)?;
    let ones = vec![1.0; model.n_agents()];
    let w_o = if model.q.iter().all(|&x| x == model.q[0]) {
        w_star.clone()
    } else {
        model.minimize_weighted(&ones)?.0
    };
    Ok(GroundTruth { w_star, w_o, solver_residual })
}

/// `δ`, and `ν` at the most curved agent `k₀` (smallest index on ties).
pub fn hessian_bounds(model: &CostModel) -> Result<HessianBounds> {
    let delta = model.agents.iter().map(|a| a.curvature_upper()).fold(0.0, f64::max);
    let mut nu = f64::NEG_INFINITY;
    let mut k_o = 0;
    for (k, a) in model.agents.iter().enumerate() {
        let lo = a.curvature_lower();
        if lo > nu {
            nu = lo;
            k_o = k;
        }
    }
    if !(nu > 1e-12 * delta.max(1.0)) {
        return Err(Error::Assumption(alloc::format!("no strongly convex agent (nu = {nu:e})")));
    }
    Ok(HessianBounds { nu, delta, k_o })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_least_squares_by_hand() {
        let m = mse_quadratic_model(vec![DMatrix::from_element(1, 1, 4.0)], vec![DVector::from_element(1, 8.0)]).unwrap();
        let g = m.agent(0).gradient(&DVector::zeros(1));
        assert_eq!(g[0], -8.0);
        let gt = solve_centralized(&m).unwrap();
        assert!((gt.w_star[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_origin_gradient() {
        let m = logistic_model(3, 2, 3, 7, 0.5).unwrap();
        let w = DVector::zeros(3);
        if let AgentCost::Logistic { features, labels, .. } = m.agent(1) {
            let l = labels.len() as f64;
            let v = m.agent(1).value(&w);
            assert!((v - 2f64.ln()).abs() < 1e-15);
            let expect = -(features.transpose() * labels) / (2.0 * l);
            assert!((m.agent(1).gradient(&w) - expect).amax() < 1e-15);
        } else {
            panic!("expected a logistic agent");
        }
    }

    #[test]
    fn non_symmetric_covariance_rejected() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(mse_quadratic_model(vec![r], vec![DVector::zeros(2)]).is_err());
    }

    #[test]
    fn isotropic_bounds() {
        let m = isotropic_mse_model(2, 1.7, &[1.0, -1.0]).unwrap();
        let hb = hessian_bounds(&m).unwrap();
        assert!((hb.nu - 1.7).abs() < 1e-14 && (hb.delta - 1.7).abs() < 1e-14 && hb.k_o == 0);
    }
}
