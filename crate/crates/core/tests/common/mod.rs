#![allow(dead_code)]

use mflq_core::model::{CostSpec, MeanFieldSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn example1() -> (MeanFieldSystem, CostSpec) {
    (
        MeanFieldSystem::scalar([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]).unwrap(),
        CostSpec::scalar(1.0, 1.0, 1.0, 1.0).unwrap(),
    )
}

pub fn example2() -> (MeanFieldSystem, CostSpec) {
    (
        MeanFieldSystem::scalar([2.0, 0.8, 1.0, 1.2, 0.1, 0.6, -0.8, -0.2]).unwrap(),
        CostSpec::scalar(1.0, 1.0, 1.0, 3.0).unwrap(),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..=scale))
}

/// `LL'/n + floor I` with `L` uniform in `[-1, 1]`.
pub fn psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = uniform(rng, n, n, 1.0);
    &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

pub fn symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = uniform(rng, n, n, scale);
    (&m + m.transpose()) * 0.5
}

/// Random system with coefficients in `[-1, 1]`.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> MeanFieldSystem {
    MeanFieldSystem::new(
        uniform(rng, n, n, 1.0),
        uniform(rng, n, n, 1.0),
        uniform(rng, n, m, 1.0),
        uniform(rng, n, m, 1.0),
        uniform(rng, n, n, 1.0),
        uniform(rng, n, n, 1.0),
        uniform(rng, n, m, 1.0),
        uniform(rng, n, m, 1.0),
    )
    .unwrap()
}

/// Weights with `Q ⪰ 0`, `Q + Q̄ ⪰ 0`, `R ≻ 0`, `R + R̄ ≻ 0`; the barred
/// weights are frequently indefinite.
pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostSpec {
    let q = psd(rng, n, 0.0);
    let theta: f64 = rng.random_range(0.0..=1.0);
    let qbar = psd(rng, n, 0.0) - &q * theta;
    let r = psd(rng, m, 0.2);
    let theta: f64 = rng.random_range(0.0..=0.9);
    let rbar = psd(rng, m, 0.0) - &r * theta;
    CostSpec::infinite(q, qbar, r, rbar).unwrap()
}

/// PSD terminal weights `P_T ⪰ 0`, `P_T + P̄_T ⪰ 0`.
pub fn random_terminal(rng: &mut ChaCha8Rng, cost: &CostSpec) -> CostSpec {
    let n = cost.n();
    let p = psd(rng, n, 0.0);
    let theta: f64 = rng.random_range(0.0..=1.0);
    let pbar = psd(rng, n, 0.0) - &p * theta;
    cost.with_terminal(p, pbar).unwrap()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    mflq_core::linalg::min_eigenvalue(m)
}
