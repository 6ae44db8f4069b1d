//! Closed-form M-step updates.
//!
//! Every update maximizes the expected complete-data log-likelihood in one
//! parameter block given the smoothed moments and the freshest values of the
//! other blocks. Sums over the state transition run over `t = 1..=T` and use
//! the smoothed initial state `f_0`.

use nalgebra::{DMatrix, DVector};

use crate::kalman::SmootherOutput;
use crate::linalg::{self, commute_sandwich, floor_eigenvalues, spd_solve, star, symmetrize};
use crate::params::SeparateMar;
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const STATE_COV_FLOOR: f64 = 1e-10;
const LOADING_RIDGE: f64 = 1e-10;
const DYNAMICS_RIDGE: f64 = 1e-8;

fn factor_matrix(smo: &SmootherOutput, t: usize, k1: usize, k2: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(k1, k2, smo.f_sm[t].as_slice())
}

fn sum_second_moments(smo: &SmootherOutput) -> DMatrix<f64> {
    (0..smo.len()).fold(DMatrix::zeros(smo.f0_sm.len(), smo.f0_sm.len()), |acc, t| {
        acc + smo.second_moment(t)
    })
}

fn check_dims(y: &[DMatrix<f64>], smo: &SmootherOutput, k1: usize, k2: usize) -> Result<()> {
    if y.len() != smo.len() {
        return Err(Error::Shape(format!("{} observations but {} smoothed states", y.len(), smo.len())));
    }
    if smo.f0_sm.len() != k1 * k2 {
        return Err(Error::Shape("state dimension is not k1*k2".into()));
    }
    Ok(())
}

fn solve_right(num: &DMatrix<f64>, gram: &DMatrix<f64>, ridge: f64, what: &str, warn: &mut Vec<String>) -> Result<DMatrix<f64>> {
    let (x, ridged) = spd_solve(gram, &num.transpose(), ridge)?;
    if ridged {
        warn.push(format!("{what}: singular normal matrix, ridge added"));
    }
    Ok(x.transpose())
}

fn weighted_gram(a: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * weights[i]);
    a.transpose() * scaled
}

fn scale_rows(a: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * weights[i])
}

/// Row loadings given the previous column loadings and column variances.
pub fn mstep_r(
    y: &[DMatrix<f64>],
    k_diag: &DVector<f64>,
    c_prev: &DMatrix<f64>,
    smo: &SmootherOutput,
    warn: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let k2 = c_prev.ncols();
    let k1 = smo.f0_sm.len() / k2;
    check_dims(y, smo, k1, k2)?;
    let kinv = k_diag.map(|v| 1.0 / v);
    let ck = scale_rows(c_prev, &kinv);
    let mut num = DMatrix::zeros(y[0].nrows(), k1);
    for (t, yt) in y.iter().enumerate() {
        num += yt * &ck * factor_matrix(smo, t, k1, k2).transpose();
    }
    let gram = star(&weighted_gram(c_prev, &kinv), &sum_second_moments(smo), k1, k1)?;
    solve_right(&num, &gram, LOADING_RIDGE, "R update", warn)
}

/// Column loadings given the new row loadings and the previous row variances.
pub fn mstep_c(
    y: &[DMatrix<f64>],
    h_diag: &DVector<f64>,
    r_new: &DMatrix<f64>,
    smo: &SmootherOutput,
    warn: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let k1 = r_new.ncols();
    let k2 = smo.f0_sm.len() / k1;
    check_dims(y, smo, k1, k2)?;
    let hinv = h_diag.map(|v| 1.0 / v);
    let rh = scale_rows(r_new, &hinv);
    let mut num = DMatrix::zeros(y[0].ncols(), k2);
    for (t, yt) in y.iter().enumerate() {
        num += yt.transpose() * &rh * factor_matrix(smo, t, k1, k2);
    }
    let m = commute_sandwich(&sum_second_moments(smo), k1, k2);
    let gram = star(&weighted_gram(r_new, &hinv), &m, k2, k2)?;
    solve_right(&num, &gram, LOADING_RIDGE, "C update", warn)
}

/// Row variances given the new loadings and the previous column variances.
pub fn mstep_h(
    y: &[DMatrix<f64>],
    k_prev: &DVector<f64>,
    r_new: &DMatrix<f64>,
    c_new: &DMatrix<f64>,
    smo: &SmootherOutput,
) -> Result<DVector<f64>> {
    let (k1, k2) = (r_new.ncols(), c_new.ncols());
    check_dims(y, smo, k1, k2)?;
    let (p1, p2, n_t) = (r_new.nrows(), c_new.nrows(), y.len());
    let kinv = k_prev.map(|v| 1.0 / v);
    let ck = scale_rows(c_new, &kinv);
    let mut quad = DVector::<f64>::zeros(p1);
    let mut cross = DMatrix::zeros(p1, k1);
    for (t, yt) in y.iter().enumerate() {
        for i in 0..p1 {
            quad[i] += (0..p2).map(|j| yt[(i, j)] * yt[(i, j)] * kinv[j]).sum::<f64>();
        }
        cross += yt * &ck * factor_matrix(smo, t, k1, k2).transpose();
    }
    let x = star(&weighted_gram(c_new, &kinv), &sum_second_moments(smo), k1, k1)?;
    let rx = r_new * x;
    let denom = (n_t * p2) as f64;
    Ok(DVector::from_fn(p1, |i, _| {
        let fit = rx.row(i).dot(&r_new.row(i));
        let cr = cross.row(i).dot(&r_new.row(i));
        ((quad[i] - 2.0 * cr + fit) / denom).max(VARIANCE_FLOOR)
    }))
}

/// Column variances given the new loadings and the new row variances.
pub fn mstep_k(
    y: &[DMatrix<f64>],
    h_new: &DVector<f64>,
    r_new: &DMatrix<f64>,
    c_new: &DMatrix<f64>,
    smo: &SmootherOutput,
) -> Result<DVector<f64>> {
    let (k1, k2) = (r_new.ncols(), c_new.ncols());
    check_dims(y, smo, k1, k2)?;
    let (p1, p2, n_t) = (r_new.nrows(), c_new.nrows(), y.len());
    let hinv = h_new.map(|v| 1.0 / v);
    let rh = scale_rows(r_new, &hinv);
    let mut quad = DVector::<f64>::zeros(p2);
    let mut cross = DMatrix::zeros(p2, k2);
    for (t, yt) in y.iter().enumerate() {
        for j in 0..p2 {
            quad[j] += (0..p1).map(|i| yt[(i, j)] * yt[(i, j)] * hinv[i]).sum::<f64>();
        }
        cross += yt.transpose() * &rh * factor_matrix(smo, t, k1, k2);
    }
    let m = commute_sandwich(&sum_second_moments(smo), k1, k2);
    let x = star(&weighted_gram(r_new, &hinv), &m, k2, k2)?;
    let cx = c_new * x;
    let denom = (n_t * p1) as f64;
    Ok(DVector::from_fn(p2, |j, _| {
        let fit = cx.row(j).dot(&c_new.row(j));
        let cc = cross.row(j).dot(&c_new.row(j));
        ((quad[j] - 2.0 * cc + fit) / denom).max(VARIANCE_FLOOR)
    }))
}

/// Sums of smoothed transition moments over `t = 1..=T`.
#[derive(Debug, Clone)]
pub struct TransitionMoments {
    /// `Σ E[f_t f_t']`
    pub s11: DMatrix<f64>,
    /// `Σ E[f_t f_{t-1}']`
    pub s10: DMatrix<f64>,
    /// `Σ E[f_{t-1} f_{t-1}']`
    pub s00: DMatrix<f64>,
    pub n: usize,
}

pub fn transition_moments(smo: &SmootherOutput) -> TransitionMoments {
    let d = smo.f0_sm.len();
    let mut s11 = DMatrix::zeros(d, d);
    let mut s10 = DMatrix::zeros(d, d);
    let mut s00 = DMatrix::zeros(d, d);
    for t in 0..smo.len() {
        let (fl, pl) = smo.lagged(t);
        s11 += smo.second_moment(t);
        s10 += &smo.f_sm[t] * fl.transpose() + &smo.delta_sm[t];
        s00 += fl * fl.transpose() + pl;
    }
    TransitionMoments { s11, s10, s00, n: smo.len() }
}

/// Kronecker-direct transition and innovation covariance updates.
pub fn mstep_dynamics(smo: &SmootherOutput, warn: &mut Vec<String>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = transition_moments(smo);
    let ba = solve_right(&m.s10, &m.s00, DYNAMICS_RIDGE, "transition update", warn)?;
    let qp = (&m.s11 - &m.s10 * ba.transpose()) / m.n as f64;
    Ok((ba, floor_eigenvalues(&symmetrize(&qp), STATE_COV_FLOOR)))
}

fn sym_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    Ok(spd_solve(m, &DMatrix::identity(n, n), 1e-12)?.0)
}

/// Separate `A, B, P, Q` updates, applied in that order. The scale of the
/// pairs `(A, B)` and `(P, Q)` is fixed by `‖A‖_F = √k1` and `tr(P) = k1`.
pub fn mstep_separate_mar(smo: &SmootherOutput, prev: &SeparateMar, warn: &mut Vec<String>) -> Result<SeparateMar> {
    let (k1, k2) = (prev.a.nrows(), prev.b.nrows());
    if smo.f0_sm.len() != k1 * k2 {
        return Err(Error::Shape("separate MAR factors do not match the state".into()));
    }
    let m = transition_moments(smo);
    let s10_c = commute_sandwich(&m.s10, k1, k2);
    let s00_c = commute_sandwich(&m.s00, k1, k2);

    let qinv = sym_inverse(&prev.q)?;
    let num_a = star(&(&qinv * &prev.b), &m.s10, k1, k1)?;
    let gram_a = star(&(prev.b.transpose() * &qinv * &prev.b), &m.s00, k1, k1)?;
    let a = solve_right(&num_a, &gram_a, DYNAMICS_RIDGE, "A update", warn)?;

    let pinv = sym_inverse(&prev.p)?;
    let num_b = star(&(&pinv * &a), &s10_c, k2, k2)?;
    let gram_b = star(&(a.transpose() * &pinv * &a), &s00_c, k2, k2)?;
    let b = solve_right(&num_b, &gram_b, DYNAMICS_RIDGE, "B update", warn)?;

    let ba = linalg::kron(&b, &a);
    let suu = &m.s11 - &m.s10 * ba.transpose() - &ba * m.s10.transpose() + &ba * &m.s00 * ba.transpose();
    let suu = symmetrize(&suu);
    let n = m.n as f64;
    let p = star(&qinv, &suu, k1, k1)? / (n * k2 as f64);
    let p = floor_eigenvalues(&p, STATE_COV_FLOOR);
    let pinv_new = sym_inverse(&p)?;
    let q = star(&pinv_new, &commute_sandwich(&suu, k1, k2), k2, k2)? / (n * k1 as f64);
    let q = floor_eigenvalues(&q, STATE_COV_FLOOR);

    Ok(normalize_separate(SeparateMar { a, b, p, q }))
}

pub fn normalize_separate(mut s: SeparateMar) -> SeparateMar {
    let k1 = s.a.nrows() as f64;
    let na = s.a.norm();
    if na > 0.0 {
        let c = na / k1.sqrt();
        s.a /= c;
        s.b *= c;
    }
    let tp = s.p.trace();
    if tp > 0.0 {
        let c = tp / k1;
        s.p /= c;
        s.q *= c;
    }
    s
}

fn masked(y: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    y.zip_map(w, |v, o| if o == 1.0 { v } else { 0.0 })
}

/// Row loadings under missing data: solves the stacked `(p1 k1)` system.
/// Rows with no observed entry keep their previous value.
#[allow(clippy::too_many_arguments)]
pub fn mstep_r_missing(
    y: &[DMatrix<f64>],
    w: &[DMatrix<f64>],
    k_diag: &DVector<f64>,
    c_prev: &DMatrix<f64>,
    h_diag: &DVector<f64>,
    r_prev: &DMatrix<f64>,
    smo: &SmootherOutput,
    warn: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let (p1, k1) = r_prev.shape();
    let (p2, k2) = c_prev.shape();
    check_dims(y, smo, k1, k2)?;
    let dim = p1 * k1;
    let mut sys = DMatrix::zeros(dim, dim);
    let mut rhs = DMatrix::zeros(p1, k1);
    for (t, yt) in y.iter().enumerate() {
        let wt = &w[t];
        let mt = smo.second_moment(t);
        let z = DMatrix::from_fn(p1, p2, |i, j| {
            if wt[(i, j)] == 1.0 {
                yt[(i, j)] / (h_diag[i] * k_diag[j])
            } else {
                0.0
            }
        });
        rhs += z * c_prev * factor_matrix(smo, t, k1, k2).transpose();
        for i in 0..p1 {
            let weights = DVector::from_fn(p2, |j, _| wt[(i, j)] / k_diag[j]);
            if weights.iter().all(|&v| v == 0.0) {
                continue;
            }
            let x = star(&weighted_gram(c_prev, &weights), &mt, k1, k1)?;
            for a in 0..k1 {
                for b in 0..k1 {
                    sys[(i + a * p1, i + b * p1)] += x[(a, b)] / h_diag[i];
                }
            }
        }
    }
    pin_unobserved(&mut sys, &mut rhs, r_prev, |i| (0..y.len()).all(|t| w[t].row(i).iter().all(|&v| v == 0.0)), "row", warn);
    let (x, ridged) = spd_solve(&sys, &as_column(&rhs), LOADING_RIDGE)?;
    if ridged {
        warn.push("R update (missing data): singular system, ridge added".into());
    }
    linalg::unvec(&x.column(0).into_owned(), p1, k1)
}

/// Column loadings under missing data, mirroring [`mstep_r_missing`].
#[allow(clippy::too_many_arguments)]
pub fn mstep_c_missing(
    y: &[DMatrix<f64>],
    w: &[DMatrix<f64>],
    h_diag: &DVector<f64>,
    r_new: &DMatrix<f64>,
    k_diag: &DVector<f64>,
    c_prev: &DMatrix<f64>,
    smo: &SmootherOutput,
    warn: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let (p1, k1) = r_new.shape();
    let (p2, k2) = c_prev.shape();
    check_dims(y, smo, k1, k2)?;
    let dim = p2 * k2;
    let mut sys = DMatrix::zeros(dim, dim);
    let mut rhs = DMatrix::zeros(p2, k2);
    for (t, yt) in y.iter().enumerate() {
        let wt = &w[t];
        let mt = commute_sandwich(&smo.second_moment(t), k1, k2);
        let z = DMatrix::from_fn(p1, p2, |i, j| {
            if wt[(i, j)] == 1.0 {
                yt[(i, j)] / (h_diag[i] * k_diag[j])
            } else {
                0.0
            }
        });
        rhs += z.transpose() * r_new * factor_matrix(smo, t, k1, k2);
        for j in 0..p2 {
            let weights = DVector::from_fn(p1, |i, _| wt[(i, j)] / h_diag[i]);
            if weights.iter().all(|&v| v == 0.0) {
                continue;
            }
            let x = star(&weighted_gram(r_new, &weights), &mt, k2, k2)?;
            for a in 0..k2 {
                for b in 0..k2 {
                    sys[(j + a * p2, j + b * p2)] += x[(a, b)] / k_diag[j];
                }
            }
        }
    }
    pin_unobserved(&mut sys, &mut rhs, c_prev, |j| (0..y.len()).all(|t| w[t].column(j).iter().all(|&v| v == 0.0)), "column", warn);
    let (x, ridged) = spd_solve(&sys, &as_column(&rhs), LOADING_RIDGE)?;
    if ridged {
        warn.push("C update (missing data): singular system, ridge added".into());
    }
    linalg::unvec(&x.column(0).into_owned(), p2, k2)
}

fn as_column(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.len(), 1, m.as_slice())
}

fn pin_unobserved(
    sys: &mut DMatrix<f64>,
    rhs: &mut DMatrix<f64>,
    prev: &DMatrix<f64>,
    unobserved: impl Fn(usize) -> bool,
    what: &str,
    warn: &mut Vec<String>,
) {
    let (p, k) = prev.shape();
    for i in (0..p).filter(|&i| unobserved(i)) {
        warn.push(format!("{what} {i} is never observed; loading kept from previous iteration"));
        for a in 0..k {
            sys[(i + a * p, i + a * p)] = 1.0;
            rhs[(i, a)] = prev[(i, a)];
        }
    }
}

/// Per-cell sums over `t` of `w (E[(y - r_i' F c_j)^2])` and of `1 - w`.
pub fn masked_residual_moments(
    y: &[DMatrix<f64>],
    w: &[DMatrix<f64>],
    r: &DMatrix<f64>,
    c: &DMatrix<f64>,
    smo: &SmootherOutput,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p1, k1) = r.shape();
    let (p2, k2) = c.shape();
    check_dims(y, smo, k1, k2)?;
    let mut resid = DMatrix::zeros(p1, p2);
    let mut missing = DMatrix::zeros(p1, p2);
    for (t, yt) in y.iter().enumerate() {
        let s = r * factor_matrix(smo, t, k1, k2) * c.transpose();
        let pi = &smo.pi_sm[t];
        for j in 0..p2 {
            let cj = c.row(j).transpose();
            let g = star(&(&cj * cj.transpose()), pi, k1, k1)?;
            let rg = r * g;
            for i in 0..p1 {
                if w[t][(i, j)] == 1.0 {
                    let e = yt[(i, j)] - s[(i, j)];
                    resid[(i, j)] += e * e + rg.row(i).dot(&r.row(i));
                } else {
                    missing[(i, j)] += 1.0;
                }
            }
        }
    }
    Ok((resid, missing))
}

/// Row and column variances under missing data. Missing cells contribute the
/// previous iteration's variance `h_i k_j`, each update holding the other
/// side at its freshest value.
#[allow(clippy::too_many_arguments)]
pub fn mstep_hk_missing(
    y: &[DMatrix<f64>],
    w: &[DMatrix<f64>],
    r_new: &DMatrix<f64>,
    c_new: &DMatrix<f64>,
    h_prev: &DVector<f64>,
    k_prev: &DVector<f64>,
    smo: &SmootherOutput,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (resid, missing) = masked_residual_moments(y, w, r_new, c_new, smo)?;
    let (p1, p2, n_t) = (r_new.nrows(), c_new.nrows(), y.len() as f64);
    let h = DVector::from_fn(p1, |i, _| {
        let s: f64 = (0..p2).map(|j| resid[(i, j)] / k_prev[j] + missing[(i, j)] * h_prev[i]).sum();
        (s / (n_t * p2 as f64)).max(VARIANCE_FLOOR)
    });
    let k = DVector::from_fn(p2, |j, _| {
        let s: f64 = (0..p1).map(|i| resid[(i, j)] / h[i] + missing[(i, j)] * k_prev[j]).sum();
        (s / (n_t * p1 as f64)).max(VARIANCE_FLOOR)
    });
    Ok((h, k))
}

/// Observed values with missing cells zeroed, for callers assembling sums.
pub fn masked_data(y: &[DMatrix<f64>], w: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    y.iter().zip(w).map(|(a, b)| masked(a, b)).collect()
}
