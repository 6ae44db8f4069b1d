//! The EM loop: Kalman smoothing, closed-form M-step, normalization and
//! convergence control.

use nalgebra::{DMatrix, DVector};

use crate::kalman::{build_state_space, smooth, SmootherOutput};
use crate::linalg::{self, floor_eigenvalues, spectral_radius};
use crate::mstep::{self, normalize_separate, STATE_COV_FLOOR};
use crate::params::SeparateMar;
use crate::pe::{self, PeInit};
use crate::{DmfmParams, Error, MatrixSeries, Result};

const STATIONARY_RADIUS: f64 = 0.999;
const LEVELS_RADIUS: f64 = 1.0 + 1e-6;
pub const IMPUTE_MAX_ITER: usize = 100;
pub const IMPUTE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmMode {
    Stationary,
    /// Undifferenced data with (near) unit-root factors.
    Levels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub k1: usize,
    pub k2: usize,
    pub eps: f64,
    pub n_max: usize,
    pub mode: EmMode,
    pub missing_aware: bool,
    pub separate_mar: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k1: 2,
            k2: 2,
            eps: 1e-4,
            n_max: 100,
            mode: EmMode::Stationary,
            missing_aware: false,
            separate_mar: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if self.n_max == 0 || self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidArgument("n_max, k1 and k2 must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmReport {
    /// `L(θ^(0)), L(θ^(1)), ...`
    pub loglik_path: Vec<f64>,
    /// Relative change between consecutive entries of `loglik_path`.
    pub delta_path: Vec<f64>,
    pub n_star: usize,
    pub converged: bool,
    pub theta_init: DmfmParams,
    pub theta_hat: DmfmParams,
    pub f_hat: Vec<DMatrix<f64>>,
    pub s_hat: Vec<DMatrix<f64>>,
    pub f_filt_last: DVector<f64>,
    pub warnings: Vec<String>,
}

impl EmReport {
    pub fn iterations(&self) -> usize {
        self.loglik_path.len() - 1
    }

    pub fn final_loglik(&self) -> f64 {
        *self.loglik_path.last().expect("path holds the initial value")
    }
}

pub fn convergence_delta(l_n: f64, l_np1: f64) -> f64 {
    (l_np1 - l_n).abs() / (0.5 * (l_np1 + l_n).abs()).max(1.0)
}

pub fn convergence_check(l_n: f64, l_np1: f64, eps: f64) -> bool {
    convergence_delta(l_n, l_np1) < eps
}

/// Initializer used by [`run_em`]: the projected estimator on complete
/// panels, the balanced sub-panel route on masked ones (falling back to the
/// projected estimator on iteratively imputed data when no sub-panel
/// qualifies).
pub fn initialize(y: &MatrixSeries, cfg: &EmConfig) -> Result<PeInit> {
    if !y.has_missing() {
        return pe::pe_init(y, cfg.k1, cfg.k2);
    }
    if !cfg.missing_aware {
        return Err(Error::Missing(
            "panel has missing entries; enable missing-aware estimation".into(),
        ));
    }
    match pe::balanced_subpanel_init(y, cfg) {
        Ok(init) => Ok(init),
        Err(Error::Missing(why)) => {
            let mut init = pe::imputed_pe(y, cfg.k1, cfg.k2, IMPUTE_MAX_ITER, IMPUTE_TOL)?;
            init.warnings.push(format!("{why}; falling back to the imputed projected estimator"));
            Ok(init)
        }
        Err(e) => Err(e),
    }
}

pub fn run_em(y: &MatrixSeries, cfg: &EmConfig) -> Result<EmReport> {
    cfg.validate()?;
    let init = initialize(y, cfg)?;
    let mut report = run_em_from(y, cfg, init.params())?;
    let mut warnings = init.warnings;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

/// Best Kronecker approximation `m ≈ B ⊗ A` with `B` of size `k2` and `A` of size `k1`.
pub fn nearest_kron(m: &DMatrix<f64>, k1: usize, k2: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let rearranged = DMatrix::from_fn(k2 * k2, k1 * k1, |row, col| {
        let (b1, b2) = (row % k2, row / k2);
        let (a1, a2) = (col % k1, col / k1);
        m[(b1 * k1 + a1, b2 * k1 + a2)]
    });
    let svd = rearranged.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &s)| if s > a.1 { (i, s) } else { a });
    let root = sigma.max(0.0).sqrt();
    let b = DMatrix::from_column_slice(k2, k2, (u.column(idx) * root).as_slice());
    let a = DMatrix::from_column_slice(k1, k1, (vt.row(idx).transpose() * root).as_slice());
    (b, a)
}

fn separate_from_kron(theta: &DmfmParams) -> SeparateMar {
    let (k1, k2) = (theta.k1(), theta.k2());
    let (b, a) = nearest_kron(&theta.ba, k1, k2);
    let (mut q, mut p) = nearest_kron(&theta.qp, k1, k2);
    if p.trace() < 0.0 {
        p.neg_mut();
        q.neg_mut();
    }
    let p = floor_eigenvalues(&p, STATE_COV_FLOOR);
    let q = floor_eigenvalues(&q, STATE_COV_FLOOR);
    normalize_separate(SeparateMar { a, b, p, q })
}

/// Inputs shared by every iteration.
struct Panel<'a> {
    y: &'a [DMatrix<f64>],
    w: Option<&'a [DMatrix<f64>]>,
    y_vec: Vec<DVector<f64>>,
    w_vec: Option<Vec<DVector<f64>>>,
}

fn smooth_at(panel: &Panel<'_>, theta: &DmfmParams, f0: &DVector<f64>) -> Result<SmootherOutput> {
    let d = f0.len();
    let ss = build_state_space(theta, f0.clone(), DMatrix::identity(d, d))?;
    smooth(&panel.y_vec, panel.w_vec.as_deref(), &ss)
}

fn fail(iteration: usize, block: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::EmFailure { iteration, block: block.to_string(), detail: e.to_string() }
}

/// One M-step from `theta` given its smoothed moments.
pub fn em_step(
    y: &[DMatrix<f64>],
    w: Option<&[DMatrix<f64>]>,
    theta: &DmfmParams,
    smo: &SmootherOutput,
    cfg: &EmConfig,
    warn: &mut Vec<String>,
) -> Result<DmfmParams> {
    let (r, c, h, k) = match w {
        Some(w) => {
            let r = mstep::mstep_r_missing(y, w, &theta.k_diag, &theta.c, &theta.h_diag, &theta.r, smo, warn)?;
            let c = mstep::mstep_c_missing(y, w, &theta.h_diag, &r, &theta.k_diag, &theta.c, smo, warn)?;
            let (h, k) = mstep::mstep_hk_missing(y, w, &r, &c, &theta.h_diag, &theta.k_diag, smo)?;
            (r, c, h, k)
        }
        None => {
            let r = mstep::mstep_r(y, &theta.k_diag, &theta.c, smo, warn)?;
            let c = mstep::mstep_c(y, &theta.h_diag, &r, smo, warn)?;
            let h = mstep::mstep_h(y, &theta.k_diag, &r, &c, smo)?;
            let k = mstep::mstep_k(y, &h, &r, &c, smo)?;
            (r, c, h, k)
        }
    };
    let (mut ba, qp, mut separate) = if cfg.separate_mar {
        let prev = theta.separate.clone().unwrap_or_else(|| separate_from_kron(theta));
        let s = mstep::mstep_separate_mar(smo, &prev, warn)?;
        (linalg::kron(&s.b, &s.a), linalg::kron(&s.q, &s.p), Some(s))
    } else {
        let (ba, qp) = mstep::mstep_dynamics(smo, warn)?;
        (ba, qp, None)
    };
    let cap = match cfg.mode {
        EmMode::Stationary => STATIONARY_RADIUS,
        EmMode::Levels => LEVELS_RADIUS,
    };
    let rho = spectral_radius(&ba);
    if rho > cap {
        let scale = cap / rho;
        ba *= scale;
        if let Some(s) = separate.as_mut() {
            s.b *= scale;
        }
        warn.push(format!("transition spectral radius {rho:.6} rescaled to {cap}"));
    }
    let mut next = DmfmParams { r, c, h_diag: h, k_diag: k, ba, qp, separate };
    next.normalize_hk();
    Ok(next)
}

/// EM from given starting parameters.
pub fn run_em_from(y: &MatrixSeries, cfg: &EmConfig, theta0: DmfmParams) -> Result<EmReport> {
    cfg.validate()?;
    if y.has_missing() && !cfg.missing_aware {
        return Err(Error::Missing(
            "panel has missing entries; enable missing-aware estimation".into(),
        ));
    }
    if theta0.p1() != y.p1() || theta0.p2() != y.p2() || theta0.k1() != cfg.k1 || theta0.k2() != cfg.k2 {
        return Err(Error::Shape("starting parameters do not match panel and factor sizes".into()));
    }
    let (y_vec, w_vec) = y.vectorized();
    let panel = Panel { y: y.data(), w: y.mask(), y_vec, w_vec };
    let mut warnings = Vec::new();

    let mut theta = theta0;
    theta.normalize_hk();
    if cfg.separate_mar && theta.separate.is_none() {
        let s = separate_from_kron(&theta);
        theta.ba = linalg::kron(&s.b, &s.a);
        theta.qp = linalg::kron(&s.q, &s.p);
        theta.separate = Some(s);
    }
    let theta_init = theta.clone();
    let d = cfg.k1 * cfg.k2;
    let mut smo = smooth_at(&panel, &theta, &DVector::zeros(d)).map_err(fail(0, "smoother"))?;
    let mut loglik_path = vec![smo.loglik];
    let mut delta_path = Vec::new();
    let mut converged = false;
    let mut n_star = cfg.n_max;

    for n in 0..cfg.n_max {
        let next = em_step(panel.y, panel.w, &theta, &smo, cfg, &mut warnings).map_err(fail(n, "M-step"))?;
        let next_smo = smooth_at(&panel, &next, &smo.f0_sm).map_err(fail(n + 1, "smoother"))?;
        let prev = *loglik_path.last().expect("nonempty");
        let delta = convergence_delta(prev, next_smo.loglik);
        loglik_path.push(next_smo.loglik);
        delta_path.push(delta);
        theta = next;
        smo = next_smo;
        if delta < cfg.eps {
            converged = true;
            n_star = n;
            break;
        }
    }

    let f_hat: Vec<DMatrix<f64>> = smo
        .f_sm
        .iter()
        .map(|f| DMatrix::from_column_slice(cfg.k1, cfg.k2, f.as_slice()))
        .collect();
    let s_hat = f_hat.iter().map(|f| theta.signal(f)).collect();
    Ok(EmReport {
        loglik_path,
        delta_path,
        n_star,
        converged,
        theta_init,
        theta_hat: theta,
        f_hat,
        s_hat,
        f_filt_last: smo.f_filt_last.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_rule() {
        assert!(convergence_check(-5.0, -5.0, 1e-4));
        let d = convergence_delta(-100.0, -99.0);
        assert!((d - 1.0 / 99.5).abs() < 1e-15);
        assert!(!convergence_check(-100.0, -99.0, 1e-4));
        assert_eq!(convergence_delta(-0.01, 0.01), 0.02);
    }

    #[test]
    fn nearest_kron_recovers_factors() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.3, 0.7]);
        let b = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.1, 0.9, 0.3, 0.0, 0.2, 0.6]);
        let (bh, ah) = nearest_kron(&linalg::kron(&b, &a), 2, 3);
        assert!((linalg::kron(&bh, &ah) - linalg::kron(&b, &a)).amax() < 1e-12);
    }
}
