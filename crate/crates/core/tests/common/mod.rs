#![allow(dead_code)]

use exdiff_core::cost::{random_quadratic_model, CostModel};
use exdiff_core::graph::{build_averaging, build_metropolis, random_connected_graph, CombinationMatrix};
use exdiff_core::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn metropolis(n: usize, prob: f64, seed: u64) -> CombinationMatrix {
    build_metropolis(&random_connected_graph(n, prob, seed).unwrap()).unwrap()
}

pub fn averaging(n: usize, prob: f64, seed: u64) -> CombinationMatrix {
    build_averaging(&random_connected_graph(n, prob, seed).unwrap()).unwrap()
}

pub fn random_quadratic(n: usize, m: usize, lo: f64, hi: f64, seed: u64) -> CostModel {
    random_quadratic_model(seed, n, m, lo, hi).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.gen::<f64>() * 2.0 - 1.0)
}
