//! Operators against definition loops, identities and random instances.

mod common;

use common::{max_abs, rand_mat, rand_spd, rng};
use dmfm_core::linalg::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn kron_loop(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    let mut out = DMatrix::zeros(m * p, n * q);
    for i in 0..m {
        for j in 0..n {
            for r in 0..p {
                for s in 0..q {
                    out[(i * p + r, j * q + s)] = a[(i, j)] * b[(r, s)];
                }
            }
        }
    }
    out
}

fn star_loop(a: &DMatrix<f64>, b: &DMatrix<f64>, p: usize, q: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p, q);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            for r in 0..p {
                for s in 0..q {
                    out[(r, s)] += a[(i, j)] * b[(i * p + r, j * q + s)];
                }
            }
        }
    }
    out
}

fn vec_loop(x: &DMatrix<f64>) -> DVector<f64> {
    let mut v = Vec::new();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            v.push(x[(i, j)]);
        }
    }
    DVector::from_vec(v)
}

#[test]
fn vec_unvec_round_trip() {
    let mut g = rng(1);
    let x = rand_mat(3, 4, &mut g);
    assert_eq!(vec(&x), vec_loop(&x));
    assert_eq!(unvec(&vec(&x), 3, 4).unwrap(), x);
    let v = DVector::from_fn(6, |i, _| i as f64 * 0.5 - 1.0);
    assert_eq!(vec(&unvec(&v, 3, 2).unwrap()), v);
}

#[test]
fn kron_matches_loop_and_vec_identity() {
    let mut g = rng(2);
    for (m, n, p, q) in [(1, 1, 3, 2), (2, 3, 3, 2), (6, 1, 1, 6), (2, 2, 3, 3)] {
        let a = rand_mat(m, n, &mut g);
        let b = rand_mat(p, q, &mut g);
        assert!(max_abs(&kron(&a, &b), &kron_loop(&a, &b)) <= TOL);
    }
    let x = rand_mat(2, 3, &mut g);
    let z = rand_mat(3, 2, &mut g);
    let y = rand_mat(2, 2, &mut g);
    let lhs = vec(&(&x * &z * &y));
    let rhs = kron(&y.transpose(), &x) * vec(&z);
    assert!((lhs - rhs).amax() <= TOL);
}

#[test]
fn hadamard_trace_identity() {
    let mut g = rng(3);
    let x = rand_mat(3, 3, &mut g);
    let y = rand_mat(3, 3, &mut g);
    let z = rand_mat(3, 3, &mut g);
    let lhs = (&x * hadamard(&y, &z).unwrap()).trace();
    let rhs = (hadamard(&x.transpose(), &y).unwrap().transpose() * &z).trace();
    assert!((lhs - rhs).abs() <= TOL);
    let ones = DMatrix::from_element(3, 3, 1.0);
    assert_eq!(hadamard(&x, &ones).unwrap(), x);
}

#[test]
fn commutation_is_the_transpose_permutation() {
    let mut g = rng(4);
    for n in 1..=4 {
        for m in 1..=4 {
            let k = commutation_matrix(n, m);
            for col in 0..n * m {
                let ones = k.column(col).iter().filter(|&&v| v == 1.0).count();
                let zeros = k.column(col).iter().filter(|&&v| v == 0.0).count();
                assert_eq!((ones, zeros), (1, n * m - 1));
            }
            let x = rand_mat(n, m, &mut g);
            assert_eq!(&k * vec(&x), vec(&x.transpose()));
            assert_eq!(commute_vec(&vec(&x), n, m), vec(&x.transpose()));
            let s = rand_mat(n * m, n * m, &mut g);
            assert_eq!(commute_sandwich(&s, n, m), &k * &s * k.transpose());
        }
    }
}

#[test]
fn star_matches_loop() {
    let mut g = rng(5);
    let ones = DMatrix::from_element(2, 2, 1.0);
    let b = rand_mat(4, 4, &mut g);
    let expected = b.view((0, 0), (2, 2)) + b.view((2, 0), (2, 2)) + b.view((0, 2), (2, 2)) + b.view((2, 2), (2, 2));
    assert!(max_abs(&star(&ones, &b, 2, 2).unwrap(), &expected) <= TOL);
    for (m, n, p, q) in [(1, 1, 3, 2), (2, 3, 2, 2), (3, 2, 2, 3), (2, 2, 3, 3)] {
        let a = rand_mat(m, n, &mut g);
        let b = rand_mat(m * p, n * q, &mut g);
        assert!(max_abs(&star(&a, &b, p, q).unwrap(), &star_loop(&a, &b, p, q)) <= TOL);
    }
}

#[test]
fn star_sandwich_identity() {
    let mut g = rng(6);
    for (a, b, c, d) in [(2, 3, 2, 2), (3, 2, 4, 1), (1, 2, 2, 3)] {
        let x = rand_mat(a, b, &mut g);
        let z = rand_mat(b, c, &mut g);
        let y = rand_mat(c, d, &mut g);
        let outer = vec(&x) * vec(&y.transpose()).transpose();
        let via_star = star(&z, &outer, a, d).unwrap();
        assert!(max_abs(&via_star, &(&x * &z * &y)) <= TOL);
    }
}

#[test]
fn special_partition_definition_and_reassembly() {
    let a = DMatrix::from_fn(4, 4, |i, j| (10 * (i + 1) + j + 1) as f64);
    let blk = special_partition(&a, 0, 0, 2, 2, 2, 2).unwrap();
    assert_eq!(blk, DMatrix::from_row_slice(2, 2, &[a[(0, 0)], a[(0, 2)], a[(2, 0)], a[(2, 2)]]));

    let mut g = rng(7);
    let a = rand_mat(6, 6, &mut g);
    let mut sum = DMatrix::zeros(6, 6);
    for i in 0..2 {
        for j in 0..2 {
            sum += kron(&special_partition(&a, i, j, 3, 3, 2, 2).unwrap(), &basis_matrix(i, j, 2, 2));
        }
    }
    assert!(max_abs(&sum, &a) <= TOL);
}

#[test]
fn diag_stack_selects_like_hadamard() {
    let mut g = rng(8);
    let w = rand_mat(3, 2, &mut g);
    let x = rand_mat(3, 2, &mut g);
    let lhs = diag_stack(&w) * vec(&x);
    assert!((lhs - vec(&hadamard(&w, &x).unwrap())).amax() <= TOL);
    let d = diag_stack(&w);
    for r in 0..6 {
        for c in 0..6 {
            let expect = if r == c { vec(&w)[r] } else { 0.0 };
            assert_eq!(d[(r, c)], expect);
        }
    }
}

#[test]
fn eig_full_reconstruction_and_sign_rule() {
    let mut g = rng(9);
    let m = rand_spd(6, &mut g);
    let e = eig_sym_topk(&m, 6).unwrap();
    let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
    assert!(max_abs(&recon, &m) <= 1e-8);
    for w in e.values.as_slice().windows(2) {
        assert!(w[0] >= w[1]);
    }
    let gram = e.vectors.transpose() * &e.vectors;
    assert!(max_abs(&gram, &DMatrix::identity(6, 6)) <= 1e-10);
    for c in 0..6 {
        let col = e.vectors.column(c);
        let big = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        assert!(big > 0.0);
    }
}

fn small_dims() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (1usize..=4, 1usize..=4, 1usize..=4, 1usize..=4, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commutation_exact((n, m, _, _, seed) in small_dims()) {
        let mut g = rng(seed);
        let x = rand_mat(n, m, &mut g);
        prop_assert_eq!(commutation_matrix(n, m) * vec(&x), vec(&x.transpose()));
    }

    #[test]
    fn star_bilinear((m, n, p, q, seed) in small_dims(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut g = rng(seed);
        let a = rand_mat(m, n, &mut g);
        let a2 = rand_mat(m, n, &mut g);
        let b = rand_mat(m * p, n * q, &mut g);
        let lhs = star(&(&a * alpha + &a2 * beta), &b, p, q).unwrap();
        let rhs = star(&a, &b, p, q).unwrap() * alpha + star(&a2, &b, p, q).unwrap() * beta;
        prop_assert!(max_abs(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn kron_mixed_product(seed in any::<u64>()) {
        let mut g = rng(seed);
        let (a, b, c, d) = (rand_mat(2, 2, &mut g), rand_mat(2, 2, &mut g), rand_mat(2, 2, &mut g), rand_mat(2, 2, &mut g));
        let lhs = kron(&a, &b) * kron(&c, &d);
        prop_assert!(max_abs(&lhs, &kron(&(&a * &c), &(&b * &d))) <= 1e-12);
    }

    #[test]
    fn partition_round_trip((m, n, p, q, seed) in small_dims()) {
        let mut g = rng(seed);
        let a = rand_mat(m * p, n * q, &mut g);
        let mut sum = DMatrix::zeros(m * p, n * q);
        for i in 0..p {
            for j in 0..q {
                sum += kron(&special_partition(&a, i, j, m, n, p, q).unwrap(), &basis_matrix(i, j, p, q));
            }
        }
        prop_assert_eq!(sum, a);
    }

    #[test]
    fn eigenpairs_residual(n in 1usize..=6, seed in any::<u64>()) {
        let mut g = rng(seed);
        let m = rand_spd(n, &mut g);
        let e = eig_sym_topk(&m, n).unwrap();
        let norm = m.norm();
        for c in 0..n {
            let v = e.vectors.column(c);
            prop_assert!((&m * v - v * e.values[c]).norm() <= 1e-8 * norm);
        }
    }
}
