//! Projected-estimator initialization.
//!
//! Loadings are leading eigenvectors of second moments of the data after
//! projecting onto a first-pass estimate of the other side's loadings.
//! Factors, idiosyncratic variances and VAR(1) dynamics follow by projection
//! and least squares.

use nalgebra::{DMatrix, DVector};

use crate::em::{run_em_from, EmConfig};
use crate::linalg::{self, eig_sym_topk, floor_eigenvalues, spd_solve, symmetrize};
use crate::mstep::{STATE_COV_FLOOR, VARIANCE_FLOOR};
use crate::{DmfmParams, Error, MatrixSeries, Result};

#[derive(Debug, Clone)]
pub struct PeInit {
    pub r0: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub f_tilde: Vec<DMatrix<f64>>,
    pub h0: DVector<f64>,
    pub k0: DVector<f64>,
    pub ba0: DMatrix<f64>,
    pub qp0: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl PeInit {
    /// Starting parameters for EM, with `mean(H) = 1`.
    pub fn params(&self) -> DmfmParams {
        let mut p = DmfmParams {
            r: self.r0.clone(),
            c: self.c0.clone(),
            h_diag: self.h0.clone(),
            k_diag: self.k0.clone(),
            ba: self.ba0.clone(),
            qp: self.qp0.clone(),
            separate: None,
        };
        p.normalize_hk();
        p
    }

    /// Estimated common component `R0 F_t C0'`.
    pub fn signal(&self) -> Vec<DMatrix<f64>> {
        self.f_tilde.iter().map(|f| &self.r0 * f * self.c0.transpose()).collect()
    }
}

fn moments_of(y: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p1, p2) = y[0].shape();
    let scale = 1.0 / (p1 * p2 * y.len()) as f64;
    let mut m1 = DMatrix::zeros(p1, p1);
    let mut m2 = DMatrix::zeros(p2, p2);
    for yt in y {
        m1 += yt * yt.transpose();
        m2 += yt.transpose() * yt;
    }
    (symmetrize(&(m1 * scale)), symmetrize(&(m2 * scale)))
}

pub fn second_moment_matrices(y: &MatrixSeries) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if y.has_missing() {
        return Err(Error::Missing("second moments need a complete panel".into()));
    }
    Ok(moments_of(y.data()))
}

fn check_k(y: &[DMatrix<f64>], k1: usize, k2: usize) -> Result<()> {
    let (p1, p2) = y[0].shape();
    if k1 == 0 || k2 == 0 || k1 > p1 || k2 > p2 {
        return Err(Error::InvalidArgument(format!(
            "factor dimensions ({k1},{k2}) invalid for a {p1}x{p2} panel"
        )));
    }
    Ok(())
}

fn scaled_eigvecs(m: &DMatrix<f64>, k: usize, what: &str, warn: &mut Vec<String>) -> Result<DMatrix<f64>> {
    let full = eig_sym_topk(m, (k + 1).min(m.nrows()))?;
    if k < full.values.len() && (full.values[k - 1] - full.values[k]).abs() < 1e-12 {
        warn.push(format!("{what}: eigen-gap below 1e-12, rotation ill-determined"));
    }
    let v = full.vectors.columns(0, k).into_owned();
    Ok(v * (m.nrows() as f64).sqrt())
}

fn loadings_from(y: &[DMatrix<f64>], k1: usize, k2: usize, warn: &mut Vec<String>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_k(y, k1, k2)?;
    let (p1, p2) = y[0].shape();
    let (m1, m2) = moments_of(y);
    let r_bar = scaled_eigvecs(&m1, k1, "first-pass row loadings", warn)?;
    let c_bar = scaled_eigvecs(&m2, k2, "first-pass column loadings", warn)?;
    let scale = 1.0 / (p1 * p2 * y.len()) as f64;
    let mut mb1 = DMatrix::zeros(p1, p1);
    let mut mb2 = DMatrix::zeros(p2, p2);
    for yt in y {
        let x = yt * &c_bar / p2 as f64;
        let z = yt.transpose() * &r_bar / p1 as f64;
        mb1 += &x * x.transpose();
        mb2 += &z * z.transpose();
    }
    let r0 = scaled_eigvecs(&symmetrize(&(mb1 * scale)), k1, "row loadings", warn)?;
    let c0 = scaled_eigvecs(&symmetrize(&(mb2 * scale)), k2, "column loadings", warn)?;
    Ok((r0, c0))
}

/// Projected loadings `(R0, C0)` with `R0'R0 = p1 I` and `C0'C0 = p2 I`.
pub fn projected_loadings(y: &MatrixSeries, k1: usize, k2: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<String>)> {
    if y.has_missing() {
        return Err(Error::Missing("projected loadings need a complete panel".into()));
    }
    let mut warn = Vec::new();
    let (r0, c0) = loadings_from(y.data(), k1, k2, &mut warn)?;
    Ok((r0, c0, warn))
}

pub fn project_factors(y: &[DMatrix<f64>], r0: &DMatrix<f64>, c0: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let scale = 1.0 / (r0.nrows() * c0.nrows()) as f64;
    y.iter().map(|yt| r0.transpose() * yt * c0 * scale).collect()
}

/// Residual variances over observed cells. With a complete panel this is
/// `H_i = (T p2)^{-1} Σ [E E']_ii` and `K_j = (T p1)^{-1} Σ [E' H^{-1} E]_jj`.
pub fn init_idio_variances(
    y: &MatrixSeries,
    r0: &DMatrix<f64>,
    c0: &DMatrix<f64>,
    f_tilde: &[DMatrix<f64>],
) -> (DVector<f64>, DVector<f64>) {
    let (p1, p2) = (y.p1(), y.p2());
    let mut e2 = DMatrix::<f64>::zeros(p1, p2);
    let mut count = DMatrix::zeros(p1, p2);
    for (t, yt) in y.data().iter().enumerate() {
        let s = r0 * &f_tilde[t] * c0.transpose();
        for j in 0..p2 {
            for i in 0..p1 {
                if y.is_observed(t, i, j) {
                    let e = yt[(i, j)] - s[(i, j)];
                    e2[(i, j)] += e * e;
                    count[(i, j)] += 1.0;
                }
            }
        }
    }
    let h = DVector::from_fn(p1, |i, _| {
        let n: f64 = count.row(i).sum();
        if n > 0.0 { (e2.row(i).sum() / n).max(VARIANCE_FLOOR) } else { 1.0 }
    });
    let k = DVector::from_fn(p2, |j, _| {
        let n: f64 = count.column(j).sum();
        let s: f64 = (0..p1).map(|i| e2[(i, j)] / h[i]).sum();
        if n > 0.0 { (s / n).max(VARIANCE_FLOOR) } else { 1.0 }
    });
    (h, k)
}

/// OLS VAR(1) on `vec F_t`. The flag reports a ridge on the Gram matrix.
pub fn init_dynamics(f_tilde: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    let d = f_tilde.first().map_or(0, |f| f.len());
    if f_tilde.len() < d + 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} periods for a VAR(1) in dimension {d}",
            d + 2
        )));
    }
    let f: Vec<DVector<f64>> = f_tilde.iter().map(linalg::vec).collect();
    let mut s10 = DMatrix::zeros(d, d);
    let mut s00 = DMatrix::zeros(d, d);
    for t in 1..f.len() {
        s10 += &f[t] * f[t - 1].transpose();
        s00 += &f[t - 1] * f[t - 1].transpose();
    }
    let (x, ridged) = spd_solve(&s00, &s10.transpose(), 1e-8)?;
    let ba = x.transpose();
    let mut qp = DMatrix::zeros(d, d);
    for t in 1..f.len() {
        let e = &f[t] - &ba * &f[t - 1];
        qp += &e * e.transpose();
    }
    qp /= (f.len() - 1) as f64;
    Ok((ba, floor_eigenvalues(&qp, STATE_COV_FLOOR), ridged))
}

fn pe_on(y_for_loadings: &[DMatrix<f64>], observed: &MatrixSeries, k1: usize, k2: usize) -> Result<PeInit> {
    let mut warnings = Vec::new();
    let (r0, c0) = loadings_from(y_for_loadings, k1, k2, &mut warnings)?;
    let f_tilde = project_factors(y_for_loadings, &r0, &c0);
    let (h0, k0) = init_idio_variances(observed, &r0, &c0, &f_tilde);
    let (ba0, qp0, ridged) = init_dynamics(&f_tilde)?;
    if ridged {
        warnings.push("initial VAR: singular Gram matrix, ridge added".into());
    }
    Ok(PeInit { r0, c0, f_tilde, h0, k0, ba0, qp0, warnings })
}

/// Projected estimator on a complete panel.
pub fn pe_init(y: &MatrixSeries, k1: usize, k2: usize) -> Result<PeInit> {
    if y.has_missing() {
        return Err(Error::Missing("use a missing-data initializer for masked panels".into()));
    }
    pe_on(y.data(), y, k1, k2)
}

/// Projected estimator with missing cells set to zero.
pub fn pe_init_zero_filled(y: &MatrixSeries, k1: usize, k2: usize) -> Result<PeInit> {
    let filled = y.zero_filled();
    let mut init = pe_on(&filled, y, k1, k2)?;
    if y.has_missing() {
        init.warnings.push("missing cells zero-filled for the projected estimator".into());
    }
    Ok(init)
}

/// Projected estimator on iteratively imputed data: missing cells are
/// replaced by the estimated common component until the imputations settle.
pub fn imputed_pe(y: &MatrixSeries, k1: usize, k2: usize, max_iter: usize, tol: f64) -> Result<PeInit> {
    let Some(mask) = y.mask() else {
        return pe_init(y, k1, k2);
    };
    let mut filled = y.zero_filled();
    let mut init = pe_on(&filled, y, k1, k2)?;
    for _ in 0..max_iter {
        let s = init.signal();
        let mut change = 0.0;
        let mut size = 0.0;
        for t in 0..filled.len() {
            for idx in 0..filled[t].len() {
                if mask[t][idx] == 0.0 {
                    change += (s[t][idx] - filled[t][idx]).powi(2);
                    size += s[t][idx].powi(2);
                    filled[t][idx] = s[t][idx];
                }
            }
        }
        init = pe_on(&filled, y, k1, k2)?;
        if change <= tol * tol * size.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(init)
}

/// Eigenvalue-ratio estimate of `(k1, k2)` from the data second moments.
pub fn eigenvalue_ratio_k(y: &MatrixSeries, kmax: usize) -> Result<(usize, usize)> {
    if kmax == 0 || kmax >= y.p1().min(y.p2()) {
        return Err(Error::InvalidArgument(format!("kmax={kmax} must be in 1..min(p1,p2)")));
    }
    let (m1, m2) = moments_of(&y.zero_filled());
    let pick = |m: &DMatrix<f64>| -> Result<usize> {
        let e = eig_sym_topk(m, kmax + 1)?;
        let mut best = (1, f64::NEG_INFINITY);
        for j in 0..kmax {
            let ratio = e.values[j] / e.values[j + 1].max(f64::MIN_POSITIVE);
            if ratio > best.1 {
                best = (j + 1, ratio);
            }
        }
        Ok(best.0)
    };
    Ok((pick(&m1)?, pick(&m2)?))
}

/// Rows and columns of a fully observed sub-panel. Repeatedly drops the row
/// or column with the largest share of ever-missing cells; ties drop columns
/// first, then the highest index.
pub fn balanced_subpanel(y: &MatrixSeries) -> (Vec<usize>, Vec<usize>) {
    let (p1, p2) = (y.p1(), y.p2());
    let mut rows: Vec<usize> = (0..p1).collect();
    let mut cols: Vec<usize> = (0..p2).collect();
    let Some(mask) = y.mask() else {
        return (rows, cols);
    };
    let ever_missing = DMatrix::from_fn(p1, p2, |i, j| mask.iter().any(|w| w[(i, j)] == 0.0));
    loop {
        if rows.is_empty() || cols.is_empty() {
            return (rows, cols);
        }
        let row_share = |i: usize| cols.iter().filter(|&&j| ever_missing[(i, j)]).count() as f64 / cols.len() as f64;
        let col_share = |j: usize| rows.iter().filter(|&&i| ever_missing[(i, j)]).count() as f64 / rows.len() as f64;
        let worst_col = cols.iter().enumerate().map(|(n, &j)| (col_share(j), n)).fold((0.0, 0), |a, b| if b.0 >= a.0 { b } else { a });
        let worst_row = rows.iter().enumerate().map(|(n, &i)| (row_share(i), n)).fold((0.0, 0), |a, b| if b.0 >= a.0 { b } else { a });
        if worst_col.0 == 0.0 && worst_row.0 == 0.0 {
            return (rows, cols);
        }
        if worst_col.0 >= worst_row.0 {
            cols.remove(worst_col.1);
        } else {
            rows.remove(worst_row.1);
        }
    }
}

/// Least-squares loadings for one cross-section: `y ≈ x' b` over the given pairs.
fn ls_loading(pairs: &[(DVector<f64>, f64)], k: usize) -> Result<(DVector<f64>, bool)> {
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DMatrix::zeros(k, 1);
    for (x, v) in pairs {
        gram += x * x.transpose();
        rhs.column_mut(0).axpy(*v, x, 1.0);
    }
    let (b, ridged) = spd_solve(&gram, &rhs, 1e-10)?;
    Ok((b.column(0).into_owned(), ridged))
}

/// Initialization for masked panels: EM on a fully observed sub-panel, with
/// loadings of the dropped rows and columns filled in by least squares on the
/// smoothed factors.
pub fn balanced_subpanel_init(y: &MatrixSeries, cfg: &EmConfig) -> Result<PeInit> {
    let (k1, k2) = (cfg.k1, cfg.k2);
    if !y.has_missing() {
        return pe_init(y, k1, k2);
    }
    let (rows, cols) = balanced_subpanel(y);
    if rows.len() < k1 + 1 || cols.len() < k2 + 1 {
        return Err(Error::Missing(format!(
            "no fully observed sub-panel of at least {}x{}",
            k1 + 1,
            k2 + 1
        )));
    }
    let sub = y.select(&rows, &cols)?;
    let sub_cfg = EmConfig { n_max: 5, missing_aware: false, separate_mar: false, ..cfg.clone() };
    let start = pe_init(&sub, k1, k2)?;
    let report = run_em_from(&sub, &sub_cfg, start.params())?;
    let mut warnings = start.warnings;
    warnings.extend(report.warnings.iter().cloned());
    warnings.push(format!("initialized on a {}x{} fully observed sub-panel", rows.len(), cols.len()));

    let (p1, p2) = (y.p1(), y.p2());
    let f = &report.f_hat;
    let theta = &report.theta_hat;
    let mut c = DMatrix::zeros(p2, k2);
    for (n, &j) in cols.iter().enumerate() {
        c.set_row(j, &theta.c.row(n));
    }
    let mut r = DMatrix::zeros(p1, k1);
    for (n, &i) in rows.iter().enumerate() {
        r.set_row(i, &theta.r.row(n));
    }
    let mut ridged = false;
    for j in (0..p2).filter(|j| !cols.contains(j)) {
        let mut pairs = Vec::new();
        for (t, ft) in f.iter().enumerate() {
            for &i in &rows {
                if y.is_observed(t, i, j) {
                    pairs.push((ft.transpose() * r.row(i).transpose(), y.data()[t][(i, j)]));
                }
            }
        }
        let (b, rg) = ls_loading(&pairs, k2)?;
        ridged |= rg;
        c.set_row(j, &b.transpose());
    }
    for i in (0..p1).filter(|i| !rows.contains(i)) {
        let mut pairs = Vec::new();
        for (t, ft) in f.iter().enumerate() {
            for j in 0..p2 {
                if y.is_observed(t, i, j) {
                    pairs.push((ft * c.row(j).transpose(), y.data()[t][(i, j)]));
                }
            }
        }
        let (b, rg) = ls_loading(&pairs, k1)?;
        ridged |= rg;
        r.set_row(i, &b.transpose());
    }
    if ridged {
        warnings.push("loading extension: singular least-squares system, ridge added".into());
    }
    let (h0, k0) = init_idio_variances(y, &r, &c, f);
    Ok(PeInit {
        r0: r,
        c0: c,
        f_tilde: f.clone(),
        h0,
        k0,
        ba0: theta.ba.clone(),
        qp0: theta.qp.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_second_moments() {
        let y = MatrixSeries::new(vec![DMatrix::from_row_slice(2, 2, &[1., 0., 0., 0.])]).unwrap();
        let (m1, m2) = second_moment_matrices(&y).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, 0., 0., 0.]);
        assert_eq!(m1, expect);
        assert_eq!(m2, expect);
        let zero = MatrixSeries::new(vec![DMatrix::zeros(3, 2); 4]).unwrap();
        let (m1, m2) = second_moment_matrices(&zero).unwrap();
        assert_eq!(m1.amax(), 0.0);
        assert_eq!(m2.amax(), 0.0);
    }

    #[test]
    fn scalar_idio_variances() {
        let y = MatrixSeries::new(vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0)]).unwrap();
        let zero = DMatrix::zeros(1, 1);
        let (h, k) = init_idio_variances(&y, &DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 1.0), &[zero.clone(), zero]);
        assert!((h[0] - 1.0).abs() < 1e-15);
        assert!((k[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_residuals_hit_the_floor() {
        let r = DMatrix::from_element(2, 1, 1.0);
        let f: Vec<_> = (0..3).map(|t| DMatrix::from_element(1, 1, t as f64)).collect();
        let y = MatrixSeries::new(f.iter().map(|ft| &r * ft * r.transpose()).collect()).unwrap();
        let (h, k) = init_idio_variances(&y, &r, &r, &f);
        assert!(h.iter().chain(k.iter()).all(|&v| v == VARIANCE_FLOOR));
    }

    #[test]
    fn constant_factor_is_a_unit_root() {
        let f = vec![DMatrix::from_element(1, 1, 2.0); 10];
        let (ba, qp, _) = init_dynamics(&f).unwrap();
        assert!((ba[(0, 0)] - 1.0).abs() < 1e-8);
        assert!(qp[(0, 0)] < 1e-8);
    }

    #[test]
    fn kmax_one_is_forced() {
        let y = MatrixSeries::new((0..5).map(|t| DMatrix::from_fn(3, 3, |i, j| ((i + 2 * j + t) % 4) as f64)).collect()).unwrap();
        assert_eq!(eigenvalue_ratio_k(&y, 1).unwrap(), (1, 1));
        assert!(eigenvalue_ratio_k(&y, 3).is_err());
    }
}
