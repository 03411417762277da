//! Error dynamics of the primal-dual recursions, step-size bounds and the
//! two-agent example.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::cost::CostModel;
use crate::error::invalid;
use crate::graph::{check_balanced, CombinationMatrix, PerronData};
use crate::linalg::{block_diag, kron_identity, spectral_norm, spectral_norm_c, sym_eigen, sym_lambda_max};
use crate::spectral::{compute_v, eigenvalues, general_eig, v_from_weights, VMatrix};
use crate::{Error, Result};

/// Tolerance used to recognise the unit eigenvalue of `B`.
pub const UNIT_TOL: f64 = 1e-8;

/// `B`, the constant factors `T_d`, `T_e` and the Hessian data of a linearized error recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    pub n: usize,
    pub dim: usize,
    /// `[[Āᵀ, −P⁻¹V], [VĀᵀ, I − VP⁻¹V]]`, 2N×2N.
    pub b: DMatrix<f64>,
    /// `[[Āᵀ, 0], [VĀᵀ, 0]]`.
    pub t_d: DMatrix<f64>,
    /// `[[I, 0], [V, 0]]`.
    pub t_e: DMatrix<f64>,
    /// Block-diagonal `ℋ = diag(H_1, …, H_N)`, NM×NM.
    pub h: DMatrix<f64>,
    pub mu: Vec<f64>,
    pub a_bar: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

fn blocks2(tl: &DMatrix<f64>, tr: &DMatrix<f64>, bl: &DMatrix<f64>, br: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, c1) = tl.shape();
    let (r2, c2) = br.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(tl);
    out.view_mut((0, c1), (r1, c2)).copy_from(tr);
    out.view_mut((r1, 0), (r2, c1)).copy_from(bl);
    out.view_mut((r1, c1), (r2, c2)).copy_from(br);
    out
}

fn p_inv(p: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(p.len(), p.iter().map(|x| 1.0 / x)))
}

/// `B` alone, from `Ā`, `P` and `V`.
pub fn b_matrix(a_bar: &DMatrix<f64>, p: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a_bar.nrows();
    let piv = p_inv(p) * v;
    let at = a_bar.transpose();
    blocks2(&at, &(-&piv), &(v * &at), &(DMatrix::identity(n, n) - v * &piv))
}

/// `T_d = [[Āᵀ, 0], [VĀᵀ, 0]]`.
pub fn t_d_matrix(a_bar: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a_bar.nrows();
    let at = a_bar.transpose();
    let z = DMatrix::zeros(n, n);
    blocks2(&at, &z, &(v * &at), &z)
}

/// `T_e = [[I, 0], [V, 0]]`.
pub fn t_e_matrix(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let z = DMatrix::zeros(n, n);
    blocks2(&DMatrix::identity(n, n), &z, v, &z)
}

/// Assemble the exact-diffusion error recursion.
///
/// Quadratic models use their constant Hessians; other models are evaluated at `at`.
pub fn build_error_dynamics(
    cm: &CombinationMatrix,
    p: &PerronData,
    v: &VMatrix,
    model: &CostModel,
    mu: &[f64],
    at: Option<&DVector<f64>>,
) -> Result<ErrorDynamics> {
    let (ok, viol) = check_balanced(cm, p);
    if !ok {
        return Err(Error::NotBalanced(viol));
    }
    let n = cm.n();
    if model.n_agents() != n || mu.len() != n || v.dim() != n {
        return Err(invalid!("dimension mismatch between matrix, model, V and step sizes"));
    }
    let hs = match model.constant_hessians() {
        Some(h) => h,
        None => {
            let w = at.ok_or_else(|| invalid!("non-quadratic model needs an evaluation point"))?;
            model.agents().iter().map(|a| a.hessian(w)).collect()
        }
    };
    let a_bar = cm.a_bar();
    Ok(ErrorDynamics {
        n,
        dim: model.dim(),
        b: b_matrix(&a_bar, &p.p, &v.v),
        t_d: t_d_matrix(&a_bar, &v.v),
        t_e: t_e_matrix(&v.v),
        h: block_diag(&hs),
        mu: mu.to_vec(),
        a_bar,
        v: v.v.clone(),
    })
}

impl ErrorDynamics {
    /// `B ⊗ I_M`.
    pub fn b_lifted(&self) -> DMatrix<f64> {
        kron_identity(&self.b, self.dim)
    }

    /// `T = [[Āᵀℳℋ, 0], [VĀᵀℳℋ, 0]]` in lifted coordinates.
    pub fn t_lifted(&self) -> DMatrix<f64> {
        let m = self.dim;
        let nm = self.n * m;
        let mut mh = self.h.clone();
        for k in 0..self.n {
            mh.rows_mut(k * m, m).scale_mut(self.mu[k]);
        }
        let top = kron_identity(&self.a_bar.transpose(), m) * mh;
        let bottom = kron_identity(&self.v, m) * &top;
        let z = DMatrix::zeros(nm, nm);
        blocks2(&top, &z, &bottom, &z)
    }

    /// `B − T`, the exact error-transition matrix for quadratic models.
    pub fn transition(&self) -> DMatrix<f64> {
        self.b_lifted() - self.t_lifted()
    }

    /// Spectral radius of `B − T` on the invariant subspace `(1ᵀ ⊗ I)Ỹ = 0`.
    pub fn restricted_spectral_radius(&self) -> Result<f64> {
        let m = self.dim;
        let n = self.n;
        let nm = n * m;
        let centering = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let (vals, vecs) = sym_eigen(&centering);
        let keep: Vec<usize> = (0..n).filter(|&i| vals[i] > 0.5).collect();
        let basis_y = DMatrix::from_fn(n, keep.len(), |r, c| vecs[(r, keep[c])]);
        let by = kron_identity(&basis_y, m);
        let cols = nm + by.ncols();
        let mut q = DMatrix::zeros(2 * nm, cols);
        q.view_mut((0, 0), (nm, nm)).copy_from(&DMatrix::identity(nm, nm));
        q.view_mut((nm, nm), (nm, by.ncols())).copy_from(&by);
        let restricted = q.transpose() * self.transition() * &q;
        Ok(eigenvalues(&restricted)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }
}

/// Decomposition `B = X D X⁻¹` with the canonical unit block.
#[derive(Debug, Clone)]
pub struct SpectralPair {
    /// `[1, 1, D₁…]`.
    pub d: Vec<Complex64>,
    /// `[R | X_R/c]`.
    pub x: DMatrix<Complex64>,
    /// `[L; c·X_L]`.
    pub x_inv: DMatrix<Complex64>,
    pub c: f64,
    /// Unscaled right eigenvectors of the non-unit eigenvalues (unit-norm columns).
    pub x_r: DMatrix<Complex64>,
    /// Unscaled matching rows with `X_L X_R = I`.
    pub x_l: DMatrix<Complex64>,
}

impl SpectralPair {
    pub fn norm_x_r(&self) -> f64 {
        spectral_norm_c(&self.x_r)
    }

    pub fn norm_x_l(&self) -> f64 {
        spectral_norm_c(&self.x_l)
    }

    /// Same decomposition with another scaling constant.
    pub fn rescaled(&self, c: f64) -> SpectralPair {
        let n2 = self.x.nrows();
        let k = self.x_r.ncols();
        let mut x = self.x.clone();
        let mut x_inv = self.x_inv.clone();
        if k > 0 {
            x.view_mut((0, 2), (n2, k)).copy_from(&(&self.x_r / Complex64::new(c, 0.0)));
            x_inv.view_mut((2, 0), (k, n2)).copy_from(&(&self.x_l * Complex64::new(c, 0.0)));
        }
        SpectralPair { c, x, x_inv, ..self.clone() }
    }
}

/// Canonical `R = [r₁ r₂]` for `N` agents.
pub fn canonical_r(n: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(2 * n, 2);
    for i in 0..n {
        r[(i, 0)] = 1.0;
        r[(n + i, 1)] = 1.0;
    }
    r
}

/// Canonical `L = [[pᵀ, 0], [0, 1ᵀ/N]]`.
pub fn canonical_l(p: &[f64]) -> DMatrix<f64> {
    let n = p.len();
    let mut l = DMatrix::zeros(2, 2 * n);
    for i in 0..n {
        l[(0, i)] = p[i];
        l[(1, n + i)] = 1.0 / n as f64;
    }
    l
}

/// Decompose `B`; `c = None` selects the scaling that maximizes the diffusion bound.
pub fn decompose_b(dynamics: &ErrorDynamics, p: &PerronData, c: Option<f64>) -> Result<SpectralPair> {
    decompose_with(&dynamics.b, &p.p, &dynamics.t_d, c)
}

fn decompose_with(b: &DMatrix<f64>, p: &[f64], t: &DMatrix<f64>, c: Option<f64>) -> Result<SpectralPair> {
    let n = p.len();
    let eig = general_eig(b)?;
    let unit: Vec<usize> = (0..2 * n).filter(|&i| (eig.values[i] - 1.0).norm() <= UNIT_TOL).collect();
    if unit.len() != 2 {
        return Err(Error::Structure(unit.len()));
    }
    let rest: Vec<usize> = (0..2 * n).filter(|i| !unit.contains(i)).collect();
    let k = rest.len();
    let r = crate::linalg::to_complex(&canonical_r(n));
    let l = crate::linalg::to_complex(&canonical_l(p));
    let mut full = DMatrix::<Complex64>::zeros(2 * n, 2 * n);
    full.view_mut((0, 0), (2 * n, 2)).copy_from(&r);
    for (t, &i) in rest.iter().enumerate() {
        full.set_column(2 + t, &eig.right.column(i));
    }
    let inv = full.clone().try_inverse().ok_or_else(|| Error::Spectral {
        msg: "eigenvector matrix with canonical unit block is singular".into(),
        iterations: 0,
    })?;
    let dev = crate::linalg::max_abs_c(&(inv.rows(0, 2) - &l));
    if dev > 1e-8 {
        return Err(Error::Spectral { msg: format!("unit left block deviates from L by {dev:e}"), iterations: 0 });
    }
    let x_r = full.columns(2, k).clone_owned();
    let x_l = inv.rows(2, k).clone_owned();
    let mut d = vec![Complex64::new(1.0, 0.0); 2];
    d.extend(rest.iter().map(|&i| eig.values[i]));
    let c = match c {
        Some(c) => c,
        None if k == 0 => 1.0,
        None => {
            let p_max = p.iter().copied().fold(0.0, f64::max);
            (p_max.sqrt() * spectral_norm_c(&x_r) / (spectral_norm_c(&x_l) * spectral_norm(t))).sqrt()
        }
    };
    let mut x_inv = DMatrix::<Complex64>::zeros(2 * n, 2 * n);
    x_inv.view_mut((0, 0), (2, 2 * n)).copy_from(&l);
    if k > 0 {
        x_inv.view_mut((2, 0), (k, 2 * n)).copy_from(&x_l);
    }
    let base = SpectralPair { d, x: full, x_inv, c: 1.0, x_r, x_l };
    Ok(base.rescaled(c))
}

/// Numerical verdicts on the structure of `B` and its decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenstructureCheck {
    /// Eigenvalues of `B` within [`UNIT_TOL`] of 1.
    pub unit_count: usize,
    /// Largest gap between sorted moduli of `B` and `{1, 1} ∪ {sqrt(λ_k(Ā)) twice}`.
    pub multiset_deviation: f64,
    /// `‖X D X⁻¹ − B‖_max`.
    pub reconstruction_error: f64,
    /// `‖X · X⁻¹ − I‖_max` with `X⁻¹` the assembled left factor.
    pub inverse_error: f64,
    /// First two rows of `inv(X)` against `L`.
    pub l_deviation: f64,
    /// `max(‖B R − R‖, ‖L B − L‖)`.
    pub invariant_residual: f64,
}

impl EigenstructureCheck {
    pub fn passes(&self) -> bool {
        self.unit_count == 2
            && self.multiset_deviation <= 1e-8
            && self.reconstruction_error <= 1e-8
            && self.inverse_error <= 1e-8
            && self.l_deviation <= 1e-10
            && self.invariant_residual <= 1e-10
    }
}

/// Check the spectrum of `B` and its canonical decomposition for a balanced matrix.
pub fn eigenstructure_check(cm: &CombinationMatrix, p: &PerronData) -> Result<EigenstructureCheck> {
    let v = compute_v(cm, p)?;
    let n = cm.n();
    let a_bar = cm.a_bar();
    let b = b_matrix(&a_bar, &p.p, &v.v);
    let vals = eigenvalues(&b)?;
    let unit_count = vals.iter().filter(|z| (**z - 1.0).norm() <= UNIT_TOL).count();

    let sq = DVector::from_iterator(n, p.p.iter().map(|x| x.sqrt()));
    let sym = DMatrix::from_fn(n, n, |i, j| a_bar[(i, j)] * sq[j] / sq[i]);
    let abar_vals = sym_eigen(&((&sym + sym.transpose()) * 0.5)).0;
    let mut expect = vec![1.0, 1.0];
    for l in &abar_vals[1..] {
        let r = l.max(0.0).sqrt();
        expect.push(r);
        expect.push(r);
    }
    expect.sort_by(|a, b| b.total_cmp(a));
    let mut got: Vec<f64> = vals.iter().map(|z| z.norm()).collect();
    got.sort_by(|a, b| b.total_cmp(a));
    let multiset_deviation = got.iter().zip(&expect).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);

    let t = t_d_matrix(&a_bar, &v.v);
    let pair = decompose_with(&b, &p.p, &t, None)?;
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(&pair.d));
    let bc = crate::linalg::to_complex(&b);
    let reconstruction_error = crate::linalg::max_abs_c(&(&pair.x * d * &pair.x_inv - &bc));
    let id = DMatrix::<Complex64>::identity(2 * n, 2 * n);
    let inverse_error = crate::linalg::max_abs_c(&(&pair.x * &pair.x_inv - &id));
    let inv = pair.x.clone().try_inverse().ok_or_else(|| Error::Spectral {
        msg: "right eigenvector matrix is singular".into(),
        iterations: 0,
    })?;
    let l = canonical_l(&p.p);
    let r = canonical_r(n);
    let l_deviation = crate::linalg::max_abs_c(&(inv.rows(0, 2) - crate::linalg::to_complex(&l)));
    let invariant_residual = crate::linalg::max_abs(&(&b * &r - &r)).max(crate::linalg::max_abs(&(&l * &b - &l)));
    Ok(EigenstructureCheck {
        unit_count,
        multiset_deviation,
        reconstruction_error,
        inverse_error,
        l_deviation,
        invariant_residual,
    })
}

/// Step-size bound, rate constants and the rate expression.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityBound {
    pub mu_bound: f64,
    pub alpha: f64,
    /// `sqrt(λ₂(Ā))`.
    pub lambda: f64,
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma21: f64,
    pub sigma22: f64,
    pub c: f64,
    pub norm_t: f64,
    pub norm_x_l: f64,
    pub norm_x_r: f64,
    pub p_max: f64,
    pub delta: f64,
}

impl StabilityBound {
    /// Rate expression at largest step `mu_max`.
    pub fn rho(&self, mu_max: f64) -> f64 {
        let s = self.p_max.sqrt();
        let d2 = self.delta * self.delta;
        let gap = 1.0 - self.lambda;
        let first = 1.0 - self.sigma11 * mu_max + 2.0 * s * self.alpha * d2 * mu_max * mu_max / gap;
        let second = self.lambda
            + s * self.alpha * d2 * mu_max / self.sigma11
            + 2.0 * self.alpha * self.alpha * d2 * mu_max * mu_max / gap;
        first.max(second)
    }
}

fn assemble_bound(
    pair: &SpectralPair,
    t: &DMatrix<f64>,
    p: &[f64],
    lambda2_a: f64,
    sigma11: f64,
    delta: f64,
) -> StabilityBound {
    let p_max = p.iter().copied().fold(0.0, f64::max);
    let s = p_max.sqrt();
    let norm_t = spectral_norm(t);
    let norm_x_l = pair.norm_x_l();
    let norm_x_r = pair.norm_x_r();
    let alpha = norm_x_l * norm_t * norm_x_r;
    let c = (s * norm_x_r / (norm_x_l * norm_t)).sqrt();
    let lambda = ((1.0 + lambda2_a) / 2.0).sqrt();
    StabilityBound {
        mu_bound: sigma11 * (1.0 - lambda) / (2.0 * s * alpha * delta * delta),
        alpha,
        lambda,
        sigma11,
        sigma12: s * delta * norm_x_r / c,
        sigma21: c * norm_x_l * norm_t * delta,
        sigma22: alpha * delta,
        c,
        norm_t,
        norm_x_l,
        norm_x_r,
        p_max,
        delta,
    }
}

/// Exact-diffusion bound for step ratios `tau` and curvature `(ν, δ, k₀)`.
pub fn diffusion_step_bound(
    cm: &CombinationMatrix,
    p: &PerronData,
    tau: &[f64],
    nu: f64,
    delta: f64,
    k_o: usize,
) -> Result<StabilityBound> {
    let n = cm.n();
    if n < 2 {
        return Err(invalid!("step-size bound needs at least two agents"));
    }
    if tau.len() != n || k_o >= n {
        return Err(invalid!("step ratios or k_o do not match {n} agents"));
    }
    if !(nu > 0.0 && delta >= nu) {
        return Err(invalid!("need 0 < nu <= delta, got nu = {nu}, delta = {delta}"));
    }
    let v = compute_v(cm, p)?;
    let a_bar = cm.a_bar();
    let t = t_d_matrix(&a_bar, &v.v);
    let b = b_matrix(&a_bar, &p.p, &v.v);
    let pair = decompose_with(&b, &p.p, &t, None)?;
    Ok(assemble_bound(&pair, &t, &p.p, p.lambda2, p.p[k_o] * tau[k_o] * nu, delta))
}

/// EXTRA bound (symmetric doubly-stochastic `A`, uniform step).
pub fn extra_step_bound(cm: &CombinationMatrix, nu: f64, delta: f64) -> Result<StabilityBound> {
    let n = cm.n();
    if n < 2 {
        return Err(invalid!("step-size bound needs at least two agents"));
    }
    if !cm.is_symmetric() || !cm.is_doubly_stochastic() {
        return Err(invalid!("extra bound needs a symmetric doubly-stochastic matrix"));
    }
    if !(nu > 0.0 && delta >= nu) {
        return Err(invalid!("need 0 < nu <= delta, got nu = {nu}, delta = {delta}"));
    }
    let p = vec![1.0 / n as f64; n];
    let v = v_from_weights(cm.matrix(), &p)?;
    let a_bar = cm.a_bar();
    let t = t_e_matrix(&v.v);
    let b = b_matrix(&a_bar, &p, &v.v);
    let pair = decompose_with(&b, &p, &t, None)?;
    let lambda2 = sym_eigen(cm.matrix()).0[1];
    Ok(assemble_bound(&pair, &t, &p, lambda2, nu / n as f64, delta))
}

/// Numerical `‖T_d‖²`, `‖T_e‖²` and the closed form `(2N + 1 − λ_N(A))/(2N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormComparison {
    pub t_d_sq: f64,
    pub t_e_sq: f64,
    pub closed_form: f64,
    /// `|t_e_sq − closed_form|`.
    pub residual: f64,
    pub lambda_n: f64,
    /// `t_d_sq < t_e_sq`.
    pub strict: bool,
}

pub fn norm_comparison(cm: &CombinationMatrix) -> Result<NormComparison> {
    if !cm.is_symmetric() || !cm.is_doubly_stochastic() {
        return Err(invalid!("norm comparison needs a symmetric doubly-stochastic matrix"));
    }
    let n = cm.n();
    let p = vec![1.0 / n as f64; n];
    let v = v_from_weights(cm.matrix(), &p)?;
    let a_bar = cm.a_bar();
    let td = t_d_matrix(&a_bar, &v.v);
    let te = t_e_matrix(&v.v);
    let t_d_sq = sym_lambda_max(&(td.transpose() * &td));
    let t_e_sq = sym_lambda_max(&(te.transpose() * &te));
    let lambda_n = *sym_eigen(cm.matrix()).0.last().unwrap();
    let closed_form = (2.0 * n as f64 + 1.0 - lambda_n) / (2.0 * n as f64);
    Ok(NormComparison {
        t_d_sq,
        t_e_sq,
        closed_form,
        residual: (t_e_sq - closed_form).abs(),
        lambda_n,
        strict: t_d_sq < t_e_sq,
    })
}

/// Two-agent quadratic example with `A = [[a, 1−a], [1−a, a]]` and `R_k = σ²I`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAgentCase {
    pub a: f64,
    pub sigma2: f64,
    pub mu: f64,
    pub mu_e: f64,
    pub e_d: DMatrix<f64>,
    pub e_e: DMatrix<f64>,
    /// `(2 − μσ²)²a² − 4(1 − μσ²)a`.
    pub delta_disc: f64,
    /// Closed-form eigenvalues of `E_d`: `1 − μσ²` then the two block roots.
    pub roots_d: [Complex64; 3],
    pub roots_e: [Complex64; 3],
    /// Largest distance between closed-form and numerical eigenvalues.
    pub root_mismatch: f64,
    pub rho_d: f64,
    pub rho_e: f64,
    pub diffusion_stable: bool,
    pub extra_stable: bool,
    /// `0 < μσ² < 2`.
    pub diffusion_predicate: bool,
    /// `μᵉσ² ≥ a + 1`.
    pub extra_sufficient_unstable: bool,
}

fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = Complex64::new(b * b - 4.0 * c, 0.0).sqrt();
    [(Complex64::new(b, 0.0) + disc) / 2.0, (Complex64::new(b, 0.0) - disc) / 2.0]
}

fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let mut best = usize::MAX;
        let mut bd = f64::INFINITY;
        for (j, y) in b.iter().enumerate() {
            if !used[j] && (x - y).norm() < bd {
                bd = (x - y).norm();
                best = j;
            }
        }
        if best == usize::MAX {
            return f64::INFINITY;
        }
        used[best] = true;
        worst = worst.max(bd);
    }
    worst
}

/// Greedy matching distance between two eigenvalue multisets.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    multiset_distance(a, b).max(multiset_distance(b, a))
}

pub fn two_agent_case(a: f64, sigma2: f64, mu: f64, mu_e: f64) -> Result<TwoAgentCase> {
    if !(a > 0.0 && a < 1.0) {
        return Err(invalid!("a = {a} not in (0, 1)"));
    }
    if !(sigma2 > 0.0) || !(mu > 0.0) || !(mu_e > 0.0) {
        return Err(invalid!("sigma², mu and mu_e must be positive"));
    }
    let x = mu * sigma2;
    let xe = mu_e * sigma2;
    let s = (2.0 - 2.0 * a).sqrt();
    let h = ((1.0 - a) / 2.0).sqrt();
    let e_d = DMatrix::from_row_slice(
        3,
        3,
        &[1.0 - x, 0.0, 0.0, 0.0, (1.0 - x) * a, -s, 0.0, (1.0 - x) * a * h, a],
    );
    let e_e = DMatrix::from_row_slice(3, 3, &[1.0 - xe, 0.0, 0.0, 0.0, a - xe, -s, 0.0, (a - xe) * h, a]);
    let [d1, d2] = quadratic_roots((2.0 - x) * a, (1.0 - x) * a);
    let [e1, e2] = quadratic_roots(2.0 * a - xe, a - xe);
    let roots_d = [Complex64::new(1.0 - x, 0.0), d1, d2];
    let roots_e = [Complex64::new(1.0 - xe, 0.0), e1, e2];
    let num_d = eigenvalues(&e_d)?;
    let num_e = eigenvalues(&e_e)?;
    let root_mismatch = spectrum_distance(&roots_d, &num_d).max(spectrum_distance(&roots_e, &num_e));
    let rho_d = num_d.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rho_e = num_e.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(TwoAgentCase {
        a,
        sigma2,
        mu,
        mu_e,
        e_d,
        e_e,
        delta_disc: (2.0 - x) * (2.0 - x) * a * a - 4.0 * (1.0 - x) * a,
        roots_d,
        roots_e,
        root_mismatch,
        rho_d,
        rho_e,
        diffusion_stable: rho_d < 1.0,
        extra_stable: rho_e < 1.0,
        diffusion_predicate: x > 0.0 && x < 2.0,
        extra_sufficient_unstable: xe >= a + 1.0,
    })
}

impl TwoAgentCase {
    /// Two-agent matrix `A(a)`.
    pub fn combination(a: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 1.0 - a, 1.0 - a, a])
    }

    /// `Q_d = [[(1 − μσ²)Ā, −2V], [(1 − μσ²)VĀ, Ā]]` (scalar case).
    pub fn q_d(&self) -> DMatrix<f64> {
        let (a_bar, v) = self.pieces();
        let f = 1.0 - self.mu * self.sigma2;
        blocks2(&(&a_bar * f), &(&v * -2.0), &(&v * &a_bar * f), &a_bar)
    }

    /// `Q_e = [[Ā − μᵉσ²I, −2V], [V(Ā − μᵉσ²I), Ā]]` (scalar case).
    pub fn q_e(&self) -> DMatrix<f64> {
        let (a_bar, v) = self.pieces();
        let shifted = &a_bar - DMatrix::identity(2, 2) * (self.mu_e * self.sigma2);
        blocks2(&shifted, &(&v * -2.0), &(&v * &shifted), &a_bar)
    }

    fn pieces(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = Self::combination(self.a);
        let a_bar = (DMatrix::identity(2, 2) + &a) * 0.5;
        let v = v_from_weights(&a, &[0.5, 0.5]).expect("two-agent matrix is balanced").v;
        (a_bar, v)
    }
}

/// Iterate `[W̃; Ỹ]_i = (B − T)[W̃; Ỹ]_{i−1}`; the result includes the initial error.
pub fn simulate_error_recursion(
    dynamics: &ErrorDynamics,
    initial: &DVector<f64>,
    iterations: usize,
) -> Result<Vec<DVector<f64>>> {
    let size = 2 * dynamics.n * dynamics.dim;
    if initial.len() != size {
        return Err(invalid!("initial error has length {}, expected {size}", initial.len()));
    }
    let f = dynamics.transition();
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(initial.clone());
    for i in 0..iterations {
        let next = &f * &out[i];
        out.push(next);
    }
    Ok(out)
}

/// Outcome of the Perron-estimate envelope check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchReport {
    pub holds: bool,
    /// Largest `error / envelope` ratio over all agents and iterations.
    pub worst_ratio: f64,
    /// Geometric decay rate fitted to the per-iteration maximum error.
    pub fitted_rate: f64,
    /// Number of iterations used in the fit.
    pub fit_points: usize,
}

/// Rounding allowance added to the envelope once it drops to machine precision.
pub const MISMATCH_FLOOR: f64 = 16.0 * f64::EPSILON;

/// Check `|z_{k,i}(k) − p_k| ≤ sqrt(h)·ρ_A^{i+1}` with `h = N` (identity start).
pub fn mismatch_decay_check(estimates: &[Vec<f64>], p: &[f64], rho_a: f64) -> MismatchReport {
    let h = p.len() as f64;
    let mut holds = true;
    let mut worst_ratio = 0.0f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, est) in estimates.iter().enumerate() {
        let env = h.sqrt() * rho_a.powi(i as i32 + 1);
        let err = est.iter().zip(p).map(|(z, pk)| (z - pk).abs()).fold(0.0, f64::max);
        if err > env * (1.0 + 1e-6) + MISMATCH_FLOOR {
            holds = false;
        }
        if env > 0.0 {
            worst_ratio = worst_ratio.max(err / env);
        }
        if err > 1e-12 {
            xs.push(i as f64);
            ys.push(err.ln());
        }
    }
    let fitted_rate = if xs.len() >= 3 { linear_fit(&xs, &ys).0.exp() } else { 0.0 };
    MismatchReport { holds, worst_ratio, fitted_rate, fit_points: xs.len() }
}

/// Least-squares line `y ≈ slope·x + intercept`; returns `(slope, intercept, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}
