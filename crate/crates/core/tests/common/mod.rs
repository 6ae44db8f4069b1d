#![allow(dead_code)]

use dmfm_core::kalman::{build_state_space, smooth, SmootherOutput};
use dmfm_core::DmfmParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn rand_pos(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5))
}

pub fn rand_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = rand_mat(n, n, rng);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn rand_params(p1: usize, p2: usize, k1: usize, k2: usize, rng: &mut ChaCha8Rng) -> DmfmParams {
    let d = k1 * k2;
    DmfmParams {
        r: rand_mat(p1, k1, rng),
        c: rand_mat(p2, k2, rng),
        h_diag: rand_pos(p1, rng),
        k_diag: rand_pos(p2, rng),
        ba: rand_mat(d, d, rng) * (0.5 / d as f64),
        qp: rand_spd(d, rng) * 0.5,
        separate: None,
    }
}

pub fn rand_panel(n_t: usize, p1: usize, p2: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    (0..n_t).map(|_| rand_mat(p1, p2, rng) * 2.0).collect()
}

pub fn vec_panel(y: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    y.iter().map(dmfm_core::linalg::vec).collect()
}

/// Smoothed moments of `theta` on `y`, optionally masked.
pub fn smoothed(theta: &DmfmParams, y: &[DMatrix<f64>], w: Option<&[DMatrix<f64>]>) -> SmootherOutput {
    let d = theta.k1() * theta.k2();
    let ss = build_state_space(theta, DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
    let wv = w.map(vec_panel);
    smooth(&vec_panel(y), wv.as_deref(), &ss).unwrap()
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}
