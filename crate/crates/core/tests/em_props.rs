mod common;

use common::{max_abs, rand_mat, rng};
use dmfm_core::em::*;
use dmfm_core::linalg::{kron, spectral_radius};
use dmfm_core::metrics::col_space_distance;
use dmfm_core::pe::pe_init;
use dmfm_core::sim::{simulate, DgpConfig, Family, MissingPattern};
use dmfm_core::{DmfmParams, MatrixSeries};
use nalgebra::DMatrix;

fn nondecreasing(path: &[f64]) -> bool {
    path.windows(2).all(|w| w[1] >= w[0] - 1e-8)
}

fn small(seed: u64) -> DgpConfig {
    DgpConfig { t: 60, p1: 10, p2: 8, delta: 0.7, tau: 0.5, seed, ..Default::default() }
}

#[test]
fn likelihood_ascends_in_every_mode() {
    let scenarios = [
        (small(1), EmConfig::default()),
        (DgpConfig { family: Family::MatrixSkewT4, ..small(2) }, EmConfig::default()),
        (DgpConfig { mu: 1.0, ..small(3) }, EmConfig { mode: EmMode::Levels, ..Default::default() }),
        (DgpConfig { missing: MissingPattern::Random(0.25), ..small(4) }, EmConfig { missing_aware: true, ..Default::default() }),
        (DgpConfig { missing: MissingPattern::Block(0.25), ..small(5) }, EmConfig { missing_aware: true, ..Default::default() }),
        (small(6), EmConfig { separate_mar: true, ..Default::default() }),
    ];
    for (dgp, cfg) in scenarios {
        let truth = simulate(&dgp).unwrap();
        let report = run_em(&truth.y, &EmConfig { eps: 1e-7, n_max: 40, ..cfg }).unwrap();
        assert!(nondecreasing(&report.loglik_path), "{dgp:?}: {:?}", report.loglik_path);
        assert!(report.iterations() >= 1);
        assert!((report.theta_hat.h_diag.mean() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn report_bookkeeping() {
    let truth = simulate(&small(7)).unwrap();
    let report = run_em(&truth.y, &EmConfig::default()).unwrap();
    assert_eq!(report.loglik_path.len(), report.delta_path.len() + 1);
    assert!(report.converged);
    assert_eq!(report.n_star + 1, report.iterations());
    assert!(*report.delta_path.last().unwrap() < 1e-4);
    assert!(report.delta_path[..report.delta_path.len() - 1].iter().all(|&d| d >= 1e-4));
    for (f, s) in report.f_hat.iter().zip(&report.s_hat) {
        assert!(max_abs(&report.theta_hat.signal(f), s) < 1e-12);
    }

    let capped = run_em(&truth.y, &EmConfig { eps: 1e-14, n_max: 3, ..Default::default() }).unwrap();
    assert!(!capped.converged);
    assert_eq!((capped.n_star, capped.iterations()), (3, 3));
}

fn random_orthogonal(k: usize, seed: u64) -> DMatrix<f64> {
    rand_mat(k, k, &mut rng(seed)).qr().q()
}

fn rotate(theta: &DmfmParams, o1: &DMatrix<f64>, o2: &DMatrix<f64>) -> DmfmParams {
    let o = kron(o2, o1);
    DmfmParams {
        r: &theta.r * o1,
        c: &theta.c * o2,
        ba: o.transpose() * &theta.ba * &o,
        qp: o.transpose() * &theta.qp * &o,
        ..theta.clone()
    }
}

#[test]
fn estimates_do_not_depend_on_the_loading_basis() {
    let truth = simulate(&DgpConfig { k1: 2, k2: 3, ..small(8) }).unwrap();
    let cfg = EmConfig { k1: 2, k2: 3, ..Default::default() };
    let start = pe_init(&truth.y, 2, 3).unwrap().params();
    let rotated = rotate(&start, &random_orthogonal(2, 9), &random_orthogonal(3, 10));
    let a = run_em_from(&truth.y, &cfg, start).unwrap();
    let b = run_em_from(&truth.y, &cfg, rotated).unwrap();
    assert_eq!(a.iterations(), b.iterations());
    for (x, y) in a.loglik_path.iter().zip(&b.loglik_path) {
        assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
    }
    for (x, y) in a.s_hat.iter().zip(&b.s_hat) {
        assert!(max_abs(x, y) < 1e-8);
    }
    let dr = |r: &EmReport| col_space_distance(&truth.params.r, &r.theta_hat.r).unwrap();
    assert!((dr(&a) - dr(&b)).abs() < 1e-8);
}

#[test]
fn all_ones_mask_gives_the_complete_data_step() {
    let truth = simulate(&small(11)).unwrap();
    let theta = pe_init(&truth.y, 2, 2).unwrap().params();
    let smo = common::smoothed(&theta, truth.y.data(), None);
    let ones = vec![DMatrix::from_element(10, 8, 1.0); 60];
    let cfg = EmConfig::default();
    let a = em_step(truth.y.data(), None, &theta, &smo, &cfg, &mut Vec::new()).unwrap();
    let b = em_step(truth.y.data(), Some(&ones), &theta, &smo, &cfg, &mut Vec::new()).unwrap();
    assert!(max_abs(&a.r, &b.r) < 1e-10);
    assert!(max_abs(&a.c, &b.c) < 1e-10);
    assert!((&a.h_diag - &b.h_diag).amax() < 1e-10);
    assert!((&a.k_diag - &b.k_diag).amax() < 1e-10);
    assert!(max_abs(&a.ba, &b.ba) < 1e-10);
    assert!(max_abs(&a.qp, &b.qp) < 1e-10);
}

#[test]
fn normalization_preserves_the_noise_product() {
    let truth = simulate(&small(12)).unwrap();
    let theta = pe_init(&truth.y, 2, 2).unwrap().params();
    let smo = common::smoothed(&theta, truth.y.data(), None);
    let mut warn = Vec::new();
    let next = em_step(truth.y.data(), None, &theta, &smo, &EmConfig::default(), &mut warn).unwrap();
    let r = dmfm_core::mstep::mstep_r(truth.y.data(), &theta.k_diag, &theta.c, &smo, &mut warn).unwrap();
    let c = dmfm_core::mstep::mstep_c(truth.y.data(), &theta.h_diag, &r, &smo, &mut warn).unwrap();
    let h = dmfm_core::mstep::mstep_h(truth.y.data(), &theta.k_diag, &r, &c, &smo).unwrap();
    let k = dmfm_core::mstep::mstep_k(truth.y.data(), &h, &r, &c, &smo).unwrap();
    assert!((next.h_diag.mean() - 1.0).abs() < 1e-12);
    let raw = kron(&DMatrix::from_column_slice(8, 1, k.as_slice()), &DMatrix::from_column_slice(10, 1, h.as_slice()));
    let norm = kron(
        &DMatrix::from_column_slice(8, 1, next.k_diag.as_slice()),
        &DMatrix::from_column_slice(10, 1, next.h_diag.as_slice()),
    );
    assert!(max_abs(&raw, &norm) < 1e-12);
}

#[test]
fn levels_mode_handles_unit_roots() {
    let truth = simulate(&DgpConfig { mu: 1.0, t: 100, ..small(13) }).unwrap();
    let cfg = EmConfig { mode: EmMode::Levels, eps: 1e-12, n_max: 25, ..Default::default() };
    let report = run_em(&truth.y, &cfg).unwrap();
    assert_eq!(report.iterations(), 25);
    assert!(report.loglik_path.iter().all(|l| l.is_finite()));
    assert!(nondecreasing(&report.loglik_path));
    assert!(spectral_radius(&report.theta_hat.ba) <= 1.0 + 1e-6 + 1e-12);
}

#[test]
fn stationary_mode_caps_the_transition() {
    let truth = simulate(&DgpConfig { mu: 1.0, t: 100, ..small(14) }).unwrap();
    let report = run_em(&truth.y, &EmConfig { n_max: 20, ..Default::default() }).unwrap();
    assert!(spectral_radius(&report.theta_hat.ba) <= 0.999 + 1e-12);
}

#[test]
fn transition_radius_is_recovered() {
    let mut radii: Vec<f64> = (0..20)
        .map(|seed| {
            let truth = simulate(&DgpConfig { t: 400, seed: 100 + seed, ..Default::default() }).unwrap();
            spectral_radius(&run_em(&truth.y, &EmConfig::default()).unwrap().theta_hat.ba)
        })
        .collect();
    radii.sort_by(f64::total_cmp);
    let median = 0.5 * (radii[9] + radii[10]);
    assert!((median - 0.7).abs() < 0.1, "median radius {median}");
}

#[test]
fn masked_panel_requires_missing_aware_mode() {
    let truth = simulate(&DgpConfig { missing: MissingPattern::Random(0.1), ..small(15) }).unwrap();
    assert!(matches!(run_em(&truth.y, &EmConfig::default()), Err(dmfm_core::Error::Missing(_))));
    let full = MatrixSeries::new(truth.y_full.clone()).unwrap();
    let bad = EmConfig { k1: 3, ..Default::default() };
    let theta = pe_init(&full, 2, 2).unwrap().params();
    assert!(run_em_from(&full, &bad, theta).is_err());
    assert!(run_em(&full, &EmConfig { eps: 0.0, ..Default::default() }).is_err());
}
