#![allow(dead_code)]

use dgdlocal::objective::{DataPartition, FactorPair, NetworkDims, NetworkPoint};
use dgdlocal::topology::{build_graph, lazy_fix, metropolis_weights, MixingMatrix};
use dgdlocal::{DenseMatrix, TopologyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_pair(n: usize, m: usize, r: usize, rng: &mut ChaCha8Rng) -> FactorPair {
    FactorPair::new(gaussian(n, r, rng), gaussian(m, r, rng)).unwrap()
}

pub fn random_point(dims: &NetworkDims, rng: &mut ChaCha8Rng) -> NetworkPoint {
    let x: Vec<f64> = (0..dims.dim()).map(|_| rng.sample(StandardNormal)).collect();
    NetworkPoint::from_flat(dims, &x).unwrap()
}

/// Random data split evenly over `nodes`.
pub fn random_partition(n: usize, m: usize, nodes: usize, rng: &mut ChaCha8Rng) -> DataPartition {
    DataPartition::even(gaussian(n, m, rng), nodes).unwrap()
}

pub fn lazy_mixing(kind: TopologyKind, nodes: usize, seed: u64) -> MixingMatrix {
    lazy_fix(&metropolis_weights(&build_graph(kind, nodes, seed).unwrap()).unwrap())
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-300)
}

/// Central differences with step `1e-5 (1 + ||x||)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5 * (1.0 + norm(x));
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Five-point central second difference along `d` with `t = 1e-2`; exact
/// up to rounding for polynomials of degree four.
pub fn fd_second(f: impl Fn(&[f64]) -> f64, x: &[f64], d: &[f64]) -> f64 {
    let t = 1e-2;
    let at = |s: f64| -> f64 { f(&x.iter().zip(d).map(|(a, b)| a + s * t * b).collect::<Vec<_>>()) };
    (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * t * t)
}

/// Dense Hessian of a quadratic form by polarization, then its full
/// spectrum via nalgebra.
pub fn dense_spectrum(q: impl Fn(&[f64]) -> f64, dim: usize) -> Vec<f64> {
    let e = |i: usize| -> Vec<f64> { (0..dim).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
    let mut h = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let (ei, ej) = (e(i), e(j));
            let plus: Vec<f64> = ei.iter().zip(&ej).map(|(a, b)| a + b).collect();
            let minus: Vec<f64> = ei.iter().zip(&ej).map(|(a, b)| a - b).collect();
            h[(i, j)] = (q(&plus) - q(&minus)) / 4.0;
        }
    }
    let mut vals: Vec<f64> = nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}
