//! Network topologies, combination matrices and their Perron data.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::invalid;
use crate::spectral::eigenvalues;
use crate::{Error, Result};

/// Tolerance on column sums of a combination matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Absolute tolerance of the balance predicate.
pub const BALANCE_TOL: f64 = 1e-10;

/// Connected undirected graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Build a graph; pairs are normalized to `(min, max)` and deduplicated.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(invalid!("graph needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(invalid!("edge ({i}, {j}) out of range for {n} agents"));
            }
            if i == j {
                return Err(invalid!("self-loop ({i}, {i}) in edge set"));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let g = Graph { n, edges: set };
        if !g.connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn path(n: usize) -> Result<Self> {
        let e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &e)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            e.push((n - 1, 0));
        }
        Graph::new(n, &e)
    }

    /// Star centred at agent 0.
    pub fn star(n: usize) -> Result<Self> {
        let e: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Graph::new(n, &e)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut e = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                e.push((i, j));
            }
        }
        Graph::new(n, &e)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted edge list with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Neighbors of `k`, excluding `k` itself.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(i, j)| if i == k { Some(j) } else if j == k { Some(i) } else { None })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, k: usize) -> usize {
        self.edges.iter().filter(|&&(i, j)| i == k || j == k).count()
    }

    fn connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        reachable(&adj, 0).iter().all(|&r| r)
    }
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Erdős–Rényi draw conditioned on connectivity.
///
/// After 200 rejected draws a random spanning tree is merged into the last draw.
pub fn random_connected_graph(n: usize, edge_probability: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(invalid!("graph needs at least one agent"));
    }
    if !(edge_probability > 0.0 && edge_probability <= 1.0) {
        return Err(invalid!("edge probability {edge_probability} not in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for _ in 0..200 {
        edges.clear();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < edge_probability {
                    edges.push((i, j));
                }
            }
        }
        if let Ok(g) = Graph::new(n, &edges) {
            return Ok(g);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for t in 1..n {
        let parent = order[rng.gen_range(0..t)];
        edges.push((parent, order[t]));
    }
    Graph::new(n, &edges)
}

/// Nonnegative left-stochastic matrix tied to a graph; `a[(l, k)]` scales data sent from `l` to `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    graph: Graph,
    a: DMatrix<f64>,
}

impl CombinationMatrix {
    /// Validate stochasticity, sparsity and primitivity.
    pub fn new(graph: Graph, a: DMatrix<f64>) -> Result<Self> {
        let cm = Self::new_unverified(graph, a)?;
        if !(0..cm.n()).any(|k| cm.a[(k, k)] > 0.0) {
            return Err(Error::NotPrimitive("no agent has a positive self-weight".into()));
        }
        if !strongly_connected(&cm.a) {
            return Err(Error::NotPrimitive("positive entries do not form a strongly connected digraph".into()));
        }
        perron_vector(&cm)?;
        Ok(cm)
    }

    /// Validate stochasticity and sparsity only; primitivity is not checked.
    pub fn new_unverified(graph: Graph, a: DMatrix<f64>) -> Result<Self> {
        let n = graph.n();
        if a.shape() != (n, n) {
            return Err(invalid!("matrix is {}x{}, graph has {} agents", a.nrows(), a.ncols(), n));
        }
        for l in 0..n {
            for k in 0..n {
                let x = a[(l, k)];
                if !x.is_finite() || x < 0.0 {
                    return Err(invalid!("entry ({l}, {k}) = {x} is not a nonnegative number"));
                }
                if x > 0.0 && l != k && !graph.has_edge(l, k) {
                    return Err(invalid!("entry ({l}, {k}) = {x} has no supporting edge"));
                }
            }
        }
        for k in 0..n {
            let s: f64 = a.column(k).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(invalid!("column {k} sums to {s}, expected 1"));
            }
        }
        Ok(CombinationMatrix { graph, a })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `Ā = (I + A)/2`.
    pub fn a_bar(&self) -> DMatrix<f64> {
        (DMatrix::identity(self.n(), self.n()) + &self.a) * 0.5
    }

    pub fn is_symmetric(&self) -> bool {
        crate::linalg::is_symmetric(&self.a, STOCHASTIC_TOL)
    }

    /// Rows also sum to one.
    pub fn is_doubly_stochastic(&self) -> bool {
        (0..self.n()).all(|l| (self.a.row(l).sum() - 1.0).abs() <= STOCHASTIC_TOL)
    }
}

/// Metropolis rule: symmetric and doubly stochastic.
pub fn build_metropolis(graph: &Graph) -> Result<CombinationMatrix> {
    let n = graph.n();
    let deg: Vec<usize> = (0..n).map(|k| graph.degree(k)).collect();
    let mut a = DMatrix::zeros(n, n);
    for (l, k) in graph.edges() {
        let w = 1.0 / (1 + deg[l].max(deg[k])) as f64;
        a[(l, k)] = w;
        a[(k, l)] = w;
    }
    for k in 0..n {
        let off: f64 = a.column(k).sum();
        a[(k, k)] = 1.0 - off;
    }
    CombinationMatrix::new(graph.clone(), a)
}

/// Averaging rule: `a[(l, k)] = 1/|N_k|` over the closed neighborhood of `k`.
pub fn build_averaging(graph: &Graph) -> Result<CombinationMatrix> {
    let n = graph.n();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let nb = graph.neighbors(k);
        let w = 1.0 / (nb.len() + 1) as f64;
        a[(k, k)] = w;
        for l in nb {
            a[(l, k)] = w;
        }
    }
    CombinationMatrix::new(graph.clone(), a)
}

/// Perron vector and spectral summary of a combination matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronData {
    /// Positive, sums to one, `A p = p`.
    pub p: Vec<f64>,
    /// Real part of the second eigenvalue in descending order.
    pub lambda2: f64,
    /// Real part of the smallest eigenvalue.
    pub lambda_n: f64,
    /// Largest modulus among the non-unit eigenvalues (0 for a single agent).
    pub rho_a: f64,
    /// Full spectrum, descending by real part.
    pub spectrum: Vec<Complex64>,
}

impl PerronData {
    pub fn p_max(&self) -> f64 {
        self.p.iter().copied().fold(0.0, f64::max)
    }

    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.p))
    }
}

/// Compute `p` by power iteration, falling back to a direct null-vector solve
/// when the spectral gap is below `1e-3`.
pub fn perron_vector(cm: &CombinationMatrix) -> Result<PerronData> {
    let a = cm.matrix();
    let n = cm.n();
    let spectrum = eigenvalues(a)?;
    let unit: Vec<usize> = (0..n).filter(|&i| (spectrum[i] - 1.0).norm() <= 1e-8).collect();
    if unit.len() != 1 {
        return Err(Error::NotPrimitive(alloc::format!("eigenvalue 1 has multiplicity {}", unit.len())));
    }
    let rho_a = (0..n).filter(|&i| i != unit[0]).map(|i| spectrum[i].norm()).fold(0.0, f64::max);
    if rho_a >= 1.0 - 1e-10 {
        return Err(Error::NotPrimitive(alloc::format!("second eigenvalue magnitude {rho_a} on the unit circle")));
    }

    let mut p = DVector::from_element(n, 1.0 / n as f64);
    let mut converged = false;
    if 1.0 - rho_a >= 1e-3 {
        let cap = 100 + (40.0 / (1.0 - rho_a)) as usize;
        for _ in 0..cap {
            let next = a * &p;
            let diff = (&next - &p).amax();
            p = next;
            if diff <= 1e-16 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        let mut m = a - DMatrix::identity(n, n);
        m.row_mut(n - 1).fill(1.0);
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        p = m.lu().solve(&rhs).ok_or_else(|| Error::NotPrimitive("singular Perron system".into()))?;
    }
    let s = p.sum();
    p /= s;
    if p.iter().any(|&x| x <= 0.0) {
        return Err(Error::NotPrimitive("Perron vector is not strictly positive".into()));
    }
    let resid = (a * &p - &p).amax();
    if resid > 1e-10 {
        return Err(Error::Spectral { msg: alloc::format!("Perron residual {resid:e}"), iterations: 0 });
    }
    let (lambda2, lambda_n) = if n == 1 { (0.0, 1.0) } else { (spectrum[1].re, spectrum[n - 1].re) };
    Ok(PerronData { p: p.iter().copied().collect(), lambda2, lambda_n, rho_a, spectrum })
}

fn reach(a: &DMatrix<f64>, transpose: bool) -> bool {
    let n = a.nrows();
    let mut seen = alloc::vec![false; n];
    let mut stack = alloc::vec![0usize];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            let x = if transpose { a[(v, u)] } else { a[(u, v)] };
            if x > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn strongly_connected(a: &DMatrix<f64>) -> bool {
    a.nrows() == 0 || (reach(a, false) && reach(a, true))
}

/// Balance predicate `‖P Aᵀ − A P‖_max ≤ 1e-10`, with the violation magnitude.
pub fn check_balanced(cm: &CombinationMatrix, p: &PerronData) -> (bool, f64) {
    let a = cm.matrix();
    if p.p.len() != cm.n() {
        return (false, f64::INFINITY);
    }
    let pm = p.diag();
    let viol = crate::linalg::max_abs(&(&pm * a.transpose() - a * &pm));
    (viol <= BALANCE_TOL, viol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_validation() {
        assert!(matches!(Graph::new(3, &[(0, 1)]), Err(Error::Disconnected)));
        assert!(matches!(Graph::new(2, &[(1, 1)]), Err(Error::Invalid(_))));
        assert!(matches!(Graph::new(2, &[(0, 2)]), Err(Error::Invalid(_))));
        let g = Graph::new(3, &[(2, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), vec![0, 2]);
    }

    #[test]
    fn reducible_matrix_rejected() {
        let g = Graph::path(2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]);
        assert!(CombinationMatrix::new_unverified(g.clone(), a.clone()).is_ok());
        assert!(matches!(CombinationMatrix::new(g, a), Err(Error::NotPrimitive(_))));
    }

    #[test]
    fn periodic_matrix_rejected() {
        let g = Graph::path(2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(CombinationMatrix::new(g, a), Err(Error::NotPrimitive(_))));
    }

    #[test]
    fn slow_mixing_uses_direct_solve() {
        let n = 100;
        let g = Graph::path(n).unwrap();
        let cm = build_averaging(&g).unwrap();
        let pd = perron_vector(&cm).unwrap();
        assert!(1.0 - pd.rho_a < 1e-3);
        let deg: Vec<f64> = (0..n).map(|k| (g.degree(k) + 1) as f64).collect();
        let tot: f64 = deg.iter().sum();
        for k in 0..n {
            assert!((pd.p[k] - deg[k] / tot).abs() < 1e-13);
        }
    }
}
