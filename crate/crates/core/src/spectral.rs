//! Eigensolvers and the square-root matrix `V` of `(P - AP)/2`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::invalid;
use crate::graph::{check_balanced, CombinationMatrix, PerronData};
use crate::linalg::{norm_inf, sym_eigen};
use crate::{Error, Result};

/// Largest matrix dimension accepted by the dense eigensolvers.
pub const MAX_DIM: usize = 200;

/// Eigenvalues of `(P - AP)/2` below this are treated as exact zeros.
pub const CLIP: f64 = 1e-12;

/// Symmetric square root of `(P - AP)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct VMatrix {
    pub v: DMatrix<f64>,
    /// Orthonormal eigenvectors shared by `V` and `V²`.
    pub u: DMatrix<f64>,
    /// Clipped eigenvalues of `V²`, descending.
    pub sigma: Vec<f64>,
}

impl VMatrix {
    /// Wrap an explicit symmetric matrix (used for hypothetical inputs).
    pub fn from_matrix(v: DMatrix<f64>) -> Result<Self> {
        if !crate::linalg::is_symmetric(&v, 1e-12) {
            return Err(invalid!("V must be symmetric"));
        }
        let (vals, u) = sym_eigen(&v);
        let sigma = vals.iter().map(|x| x * x).collect();
        Ok(VMatrix { v, u, sigma })
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    /// Eigenvalues of `V` itself, in the order of `u`'s columns.
    pub fn singular_values(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s.sqrt()).collect()
    }

    /// Moore-Penrose pseudo-inverse of `V`.
    pub fn pinv(&self) -> DMatrix<f64> {
        let n = self.dim();
        let inv = DVector::from_fn(n, |i, _| {
            let s = self.sigma[i];
            if s > CLIP {
                1.0 / s.sqrt()
            } else {
                0.0
            }
        });
        &self.u * DMatrix::from_diagonal(&inv) * self.u.transpose()
    }
}

/// Build `V` from a balanced combination matrix and its Perron data.
pub fn compute_v(a: &CombinationMatrix, p: &PerronData) -> Result<VMatrix> {
    let (ok, viol) = check_balanced(a, p);
    if !ok {
        return Err(Error::NotBalanced(viol));
    }
    v_from_weights(a.matrix(), &p.p)
}

/// Square root of `(P − AP)/2` for explicit weights, without the balance check.
pub fn v_from_weights(a: &DMatrix<f64>, p: &[f64]) -> Result<VMatrix> {
    let n = a.nrows();
    if p.len() != n || !a.is_square() {
        return Err(invalid!("weights and matrix dimensions differ"));
    }
    let pm = DMatrix::from_diagonal(&DVector::from_column_slice(p));
    let s = (&pm - a * &pm) * 0.5;
    let (vals, u) = sym_eigen(&s);
    let scale = vals.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if let Some(&low) = vals.last() {
        if low < -1e-8 * scale {
            return Err(Error::NotPsd(low));
        }
    }
    let sigma: Vec<f64> = vals.iter().map(|&x| if x < CLIP { 0.0 } else { x }).collect();
    let root = DVector::from_fn(n, |i, _| sigma[i].sqrt());
    let mut v = &u * DMatrix::from_diagonal(&root) * u.transpose();
    v = (&v + v.transpose()) * 0.5;
    Ok(VMatrix { v, u, sigma })
}

/// True iff the nullspace of `V` is exactly the span of the ones vector.
pub fn certify_nullspace(v: &VMatrix) -> bool {
    let n = v.dim();
    if n == 0 {
        return false;
    }
    let roots = v.singular_values();
    let small: Vec<usize> = (0..n).filter(|&i| roots[i] <= 1e-10).collect();
    if small.len() != 1 {
        return false;
    }
    let col = v.u.column(small[0]);
    let dot: f64 = col.iter().sum::<f64>() / (n as f64).sqrt();
    dot.abs() / col.norm() >= 1.0 - 1e-8
}

/// Eigen-decomposition of a general real matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    /// Eigenvalues, descending by real part, ties by imaginary part.
    pub values: Vec<Complex64>,
    /// Unit-norm right eigenvectors as columns.
    pub right: DMatrix<Complex64>,
    /// Left eigenvectors as columns, scaled so that `leftᴴ · right = I`.
    pub left: DMatrix<Complex64>,
    /// Largest `‖M x − λ x‖` over all pairs.
    pub max_residual: f64,
}

impl Eigen {
    /// `right⁻¹`, whose rows are the conjugated left eigenvectors.
    pub fn right_inverse(&self) -> DMatrix<Complex64> {
        self.left.adjoint()
    }
}

fn clean(z: Complex64) -> Complex64 {
    Complex64::new(z.re + 0.0, z.im + 0.0)
}

/// Deterministic ordering used everywhere downstream.
pub fn sort_spectrum(vals: &mut [Complex64]) {
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

fn check_dim(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(invalid!("eigensolver needs a square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    if m.nrows() > MAX_DIM {
        return Err(invalid!("dimension {} exceeds the cap of {}", m.nrows(), MAX_DIM));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(invalid!("matrix has non-finite entries"));
    }
    Ok(())
}

/// Eigenvalues of a general real matrix (Hessenberg reduction + shifted QR).
///
/// Symmetric input goes through the Jacobi solver. When shifted QR stalls,
/// it is restarted on a seeded random orthogonal similarity of the input.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    check_dim(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = norm_inf(m).max(1.0);
    if crate::linalg::is_symmetric(m, 1e-14 * scale) {
        let mut vals: Vec<Complex64> = sym_eigen(m).0.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        sort_spectrum(&mut vals);
        return Ok(vals);
    }
    let max_iter = 200 * n.max(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0x51a1);
    let mut work = m.clone();
    for attempt in 0..4 {
        if let Some(schur) = Schur::try_new(work.clone(), f64::EPSILON, max_iter) {
            let mut vals: Vec<Complex64> = schur.complex_eigenvalues().iter().map(|z| clean(*z)).collect();
            sort_spectrum(&mut vals);
            return Ok(vals);
        }
        if attempt == 3 {
            break;
        }
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = g.qr().q();
        work = q.transpose() * m * &q;
    }
    Err(Error::Spectral { msg: format!("shifted QR did not converge on a {n}x{n} matrix"), iterations: 4 * max_iter })
}

fn orthonormalize(z: &mut DMatrix<Complex64>) {
    let k = z.ncols();
    for _pass in 0..2 {
        for j in 0..k {
            for i in 0..j {
                let qi = z.column(i).clone_owned();
                let proj = qi.dotc(&z.column(j));
                let mut cj = z.column_mut(j);
                cj -= &qi * proj;
            }
            let nrm = z.column(j).norm();
            if nrm > 0.0 {
                z.column_mut(j).unscale_mut(nrm);
            }
        }
    }
}

fn fix_phase(z: &mut DMatrix<Complex64>, col: usize) {
    let mut best = 0;
    let mut best_mod = -1.0;
    for (i, x) in z.column(col).iter().enumerate() {
        if x.norm() > best_mod * (1.0 + 1e-12) {
            best_mod = x.norm();
            best = i;
        }
    }
    let ph = z[(best, col)] / z[(best, col)].norm();
    let conj = ph.conj();
    for x in z.column_mut(col).iter_mut() {
        *x *= conj;
    }
}

/// Full eigendecomposition with biorthogonal left/right eigenvectors.
///
/// Eigenvalues closer than `1e-9·max(1, ‖M‖∞)` are grouped and their
/// eigenspace is computed as a block by shifted inverse subspace iteration.
/// Fails if the matrix is not (numerically) diagonalizable.
pub fn general_eig(m: &DMatrix<f64>) -> Result<Eigen> {
    let values = eigenvalues(m)?;
    let n = m.nrows();
    let scale = norm_inf(m).max(1.0);
    let tol = 1e-9 * scale;
    let mc = crate::linalg::to_complex(m);
    let mut right = DMatrix::<Complex64>::zeros(n, n);
    let mut done = vec![false; n];
    let mut clusters: Vec<(Complex64, Vec<usize>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    for j in 0..n {
        if done[j] {
            continue;
        }
        let members: Vec<usize> = (j..n).filter(|&i| !done[i] && (values[i] - values[j]).norm() <= tol).collect();
        for &i in &members {
            done[i] = true;
        }
        let k = members.len();
        let center = members.iter().fold(Complex64::new(0.0, 0.0), |s, &i| s + values[i]) / k as f64;

        let mirrored = if center.im < 0.0 {
            clusters
                .iter()
                .find(|(c, idx)| idx.len() == k && (c.conj() - center).norm() <= tol)
                .map(|(_, idx)| idx.clone())
        } else {
            None
        };
        if let Some(src) = mirrored {
            for (t, &i) in members.iter().enumerate() {
                let col = right.column(src[t]).map(|z| z.conj());
                right.set_column(i, &col);
            }
            clusters.push((center, members));
            continue;
        }

        let shift = center + Complex64::new(1e-10 * scale, 0.0);
        let c = &mc - DMatrix::<Complex64>::identity(n, n) * shift;
        let lu = c.lu();
        let mut z = DMatrix::<Complex64>::from_fn(n, k, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
        for it in 0..3 {
            z = lu.solve(&z).ok_or_else(|| Error::Spectral {
                msg: format!("singular shifted system near eigenvalue {center}"),
                iterations: it,
            })?;
            orthonormalize(&mut z);
        }
        for t in 0..k {
            if k == 1 {
                fix_phase(&mut z, t);
            }
            right.set_column(members[t], &z.column(t));
        }
        clusters.push((center, members));
    }

    let mut max_residual = 0.0f64;
    for j in 0..n {
        let x = right.column(j);
        let r = &mc * x - x * values[j];
        max_residual = max_residual.max(r.norm());
    }
    if max_residual > 1e-8 * scale {
        return Err(Error::Spectral {
            msg: format!("eigenvector residual {max_residual:e}; matrix is not diagonalizable to working accuracy"),
            iterations: 3,
        });
    }
    let inv = right.clone().try_inverse().ok_or_else(|| Error::Spectral {
        msg: "eigenvector matrix is singular".into(),
        iterations: 3,
    })?;
    Ok(Eigen { values, right, left: inv.adjoint(), max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_c;

    #[test]
    fn identity_spectrum() {
        let e = general_eig(&DMatrix::identity(4, 4)).unwrap();
        assert!(e.values.iter().all(|z| (z - 1.0).norm() < 1e-14));
        assert!(max_abs_c(&(e.left.adjoint() * &e.right - DMatrix::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn rotation_has_plus_minus_i() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = general_eig(&m).unwrap();
        assert!((e.values[0] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
        assert!((e.values[1] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!(e.max_residual < 1e-12);
    }

    #[test]
    fn defective_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(general_eig(&m), Err(Error::Spectral { .. })));
        assert_eq!(eigenvalues(&m).unwrap().len(), 2);
    }

    #[test]
    fn oversize_is_rejected() {
        assert!(matches!(eigenvalues(&DMatrix::zeros(201, 201)), Err(Error::Invalid(_))));
    }

    #[test]
    fn biorthogonal_on_nonsymmetric() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.1, 0.3, 0.7, 0.4, 0.5, 0.3]);
        let e = general_eig(&m).unwrap();
        assert!(max_abs_c(&(e.left.adjoint() * &e.right - DMatrix::identity(3, 3))) < 1e-12);
        for j in 0..3 {
            assert!((e.right.column(j).norm() - 1.0).abs() < 1e-13);
        }
        let d = DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
        let recon = &e.right * d * e.right_inverse();
        assert!(max_abs_c(&(recon - crate::linalg::to_complex(&m))) < 1e-12);
    }
}
