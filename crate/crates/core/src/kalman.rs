//! Kalman filter and fixed-interval smoother for the vectorized model
//! `y_t = (C ⊗ R) f_t + e_t`, `f_t = (B ⊗ A) f_{t-1} + u_t`.
//!
//! The observation noise is diagonal, so the update processes one scalar
//! observation at a time and missing entries are skipped.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, symmetrize};
use crate::{DmfmParams, Error, Result};

#[derive(Debug, Clone)]
pub struct StateSpace {
    /// `(p1 p2) x (k1 k2)` loading `C ⊗ R`.
    pub lambda: DMatrix<f64>,
    pub obs_noise: DVector<f64>,
    pub trans: DMatrix<f64>,
    pub state_cov: DMatrix<f64>,
    pub f0: DVector<f64>,
    pub pi0: DMatrix<f64>,
}

pub fn build_state_space(theta: &DmfmParams, f0: DVector<f64>, pi0: DMatrix<f64>) -> Result<StateSpace> {
    theta.validate()?;
    let r = theta.k1() * theta.k2();
    if f0.len() != r || pi0.shape() != (r, r) {
        return Err(Error::Shape("initial state does not match factor dimension".into()));
    }
    let obs_noise = linalg::vec(&(&theta.h_diag * theta.k_diag.transpose()));
    Ok(StateSpace {
        lambda: linalg::kron(&theta.c, &theta.r),
        obs_noise,
        trans: theta.ba.clone(),
        state_cov: theta.qp.clone(),
        f0,
        pi0,
    })
}

impl StateSpace {
    pub fn state_dim(&self) -> usize {
        self.trans.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.lambda.nrows()
    }

    fn validate(&self) -> Result<()> {
        let (n, r) = (self.obs_dim(), self.state_dim());
        if self.lambda.ncols() != r
            || self.obs_noise.len() != n
            || self.state_cov.shape() != (r, r)
            || self.f0.len() != r
            || self.pi0.shape() != (r, r)
        {
            return Err(Error::Shape("inconsistent state space dimensions".into()));
        }
        if self.obs_noise.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("observation noise must be positive".into()));
        }
        if !linalg::is_symmetric(&self.state_cov, 1e-10) || !linalg::is_symmetric(&self.pi0, 1e-10) {
            return Err(Error::NotSymmetric);
        }
        Ok(())
    }
}

/// Filtered and one-step predicted moments. Index `t` refers to time `t+1`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub f_pred: Vec<DVector<f64>>,
    pub p_pred: Vec<DMatrix<f64>>,
    pub f_filt: Vec<DVector<f64>>,
    pub p_filt: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

/// Smoothed moments. Vectors are indexed by `t-1` for times `1..=T`;
/// `delta[t-1] = Cov(f_t, f_{t-1} | Y)`, so `delta[0]` pairs `f_1` with `f_0`.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub f_sm: Vec<DVector<f64>>,
    pub pi_sm: Vec<DMatrix<f64>>,
    pub delta_sm: Vec<DMatrix<f64>>,
    pub f0_sm: DVector<f64>,
    pub pi0_sm: DMatrix<f64>,
    pub f_filt_last: DVector<f64>,
    pub p_filt_last: DMatrix<f64>,
    pub loglik: f64,
}

impl SmootherOutput {
    pub fn len(&self) -> usize {
        self.f_sm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_sm.is_empty()
    }

    /// `E[f_t f_t' | Y] = f_{t|T} f_{t|T}' + Π_{t|T}`.
    pub fn second_moment(&self, t: usize) -> DMatrix<f64> {
        &self.f_sm[t] * self.f_sm[t].transpose() + &self.pi_sm[t]
    }

    /// Smoothed mean and covariance of the state before time `t+1`,
    /// i.e. of `f_t` with `f_0` at `t = 0`.
    pub fn lagged(&self, t: usize) -> (&DVector<f64>, &DMatrix<f64>) {
        if t == 0 {
            (&self.f0_sm, &self.pi0_sm)
        } else {
            (&self.f_sm[t - 1], &self.pi_sm[t - 1])
        }
    }
}

pub fn filter(y: &[DVector<f64>], mask: Option<&[DVector<f64>]>, ss: &StateSpace) -> Result<FilterOutput> {
    ss.validate()?;
    let n = ss.obs_dim();
    if y.iter().any(|v| v.len() != n) {
        return Err(Error::Shape("observation length differs from loading rows".into()));
    }
    if let Some(w) = mask {
        if w.len() != y.len() || w.iter().any(|v| v.len() != n) {
            return Err(Error::Shape("mask does not match observations".into()));
        }
    }
    let lambda_t = ss.lambda.transpose();
    let trans_t = ss.trans.transpose();
    let half_log_2pi = 0.5 * (2.0 * PI).ln();

    let mut out = FilterOutput {
        f_pred: Vec::with_capacity(y.len()),
        p_pred: Vec::with_capacity(y.len()),
        f_filt: Vec::with_capacity(y.len()),
        p_filt: Vec::with_capacity(y.len()),
        loglik: 0.0,
    };
    let mut a = ss.f0.clone();
    let mut p = ss.pi0.clone();
    for (t, yt) in y.iter().enumerate() {
        a = &ss.trans * &a;
        p = symmetrize(&(&ss.trans * &p * &trans_t + &ss.state_cov));
        out.f_pred.push(a.clone());
        out.p_pred.push(p.clone());
        for i in 0..n {
            if mask.is_some_and(|w| w[t][i] == 0.0) {
                continue;
            }
            let lam = lambda_t.column(i);
            let pl = &p * lam;
            let v = yt[i] - lam.dot(&a);
            // The quadratic form is nonnegative; clamp away rounding error.
            let f = lam.dot(&pl).max(0.0) + ss.obs_noise[i];
            if !v.is_finite() || !f.is_finite() || f <= 0.0 {
                return Err(Error::Numerical {
                    t: t + 1,
                    detail: format!("innovation {v} with variance {f} at coordinate {i}"),
                });
            }
            a.axpy(v / f, &pl, 1.0);
            p.ger(-1.0 / f, &pl, &pl, 1.0);
            out.loglik -= half_log_2pi + 0.5 * (f.ln() + v * v / f);
        }
        p = symmetrize(&p);
        out.f_filt.push(a.clone());
        out.p_filt.push(p.clone());
    }
    if !out.loglik.is_finite() {
        return Err(Error::Numerical { t: y.len(), detail: "non-finite log-likelihood".into() });
    }
    Ok(out)
}

/// `J = P_filt T' P_pred^{-1}`, computed through a symmetric solve.
fn smoother_gain(p_filt: &DMatrix<f64>, trans: &DMatrix<f64>, p_pred: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rhs = trans * p_filt;
    let (jt, _) = linalg::spd_solve(p_pred, &rhs, 1e-12)?;
    Ok(jt.transpose())
}

pub fn smooth(y: &[DVector<f64>], mask: Option<&[DVector<f64>]>, ss: &StateSpace) -> Result<SmootherOutput> {
    let filt = filter(y, mask, ss)?;
    let n_t = y.len();
    if n_t == 0 {
        return Err(Error::Shape("empty series".into()));
    }
    let mut f_sm = filt.f_filt.clone();
    let mut pi_sm = filt.p_filt.clone();
    let mut delta_sm = vec![DMatrix::zeros(ss.state_dim(), ss.state_dim()); n_t];

    for t in (0..n_t).rev() {
        // Gain linking the state at time t (0 = initial) to time t+1.
        let (ff, pf) = if t == 0 {
            (&ss.f0, &ss.pi0)
        } else {
            (&filt.f_filt[t - 1], &filt.p_filt[t - 1])
        };
        let j = smoother_gain(pf, &ss.trans, &filt.p_pred[t]).map_err(|e| Error::Numerical {
            t: t + 1,
            detail: format!("smoother gain: {e}"),
        })?;
        let f_prev = ff + &j * (&f_sm[t] - &filt.f_pred[t]);
        let p_prev = symmetrize(&(pf + &j * (&pi_sm[t] - &filt.p_pred[t]) * j.transpose()));
        delta_sm[t] = &pi_sm[t] * j.transpose();
        if t == 0 {
            return Ok(SmootherOutput {
                f0_sm: f_prev,
                pi0_sm: p_prev,
                f_filt_last: filt.f_filt[n_t - 1].clone(),
                p_filt_last: filt.p_filt[n_t - 1].clone(),
                loglik: filt.loglik,
                f_sm,
                pi_sm,
                delta_sm,
            });
        }
        f_sm[t - 1] = f_prev;
        pi_sm[t - 1] = p_prev;
    }
    unreachable!("loop returns at t = 0")
}

/// One-step-ahead state and signal forecasts from the last filtered state.
pub fn forecast_one_step(ss: &StateSpace, f_filt_last: &DVector<f64>, p1: usize, p2: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = &ss.trans * f_filt_last;
    let s = linalg::unvec(&(&ss.lambda * &f), p1, p2)?;
    Ok((f, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ss(phi: f64, q: f64, lam: f64, sigma: f64) -> StateSpace {
        StateSpace {
            lambda: DMatrix::from_element(1, 1, lam),
            obs_noise: DVector::from_element(1, sigma),
            trans: DMatrix::from_element(1, 1, phi),
            state_cov: DMatrix::from_element(1, 1, q),
            f0: DVector::zeros(1),
            pi0: DMatrix::identity(1, 1),
        }
    }

    #[test]
    fn scalar_filter_matches_hand_recursion() {
        let ss = scalar_ss(0.5, 1.0, 1.0, 1.0);
        let ys = [0.3, -1.2, 2.0];
        let y: Vec<_> = ys.iter().map(|&v| DVector::from_element(1, v)).collect();
        let out = filter(&y, None, &ss).unwrap();

        let (mut a, mut p, mut ll) = (0.0f64, 1.0f64, 0.0f64);
        for (t, &yt) in ys.iter().enumerate() {
            a *= 0.5;
            p = 0.25 * p + 1.0;
            let f = p + 1.0;
            let v = yt - a;
            ll += -0.5 * ((2.0 * PI).ln() + f.ln() + v * v / f);
            a += p / f * v;
            p -= p * p / f;
            assert!((out.f_filt[t][0] - a).abs() < 1e-12);
            assert!((out.p_filt[t][(0, 0)] - p).abs() < 1e-12);
        }
        assert!((out.loglik - ll).abs() < 1e-12);
    }

    #[test]
    fn near_noiseless_identity_tracks_data() {
        let ss = StateSpace {
            lambda: DMatrix::identity(2, 2),
            obs_noise: DVector::from_element(2, 1e-12),
            trans: DMatrix::zeros(2, 2),
            state_cov: DMatrix::identity(2, 2),
            f0: DVector::zeros(2),
            pi0: DMatrix::identity(2, 2),
        };
        let y = vec![DVector::from_vec(vec![1.0, -2.0]), DVector::from_vec(vec![0.5, 3.0])];
        let out = filter(&y, None, &ss).unwrap();
        for t in 0..2 {
            assert!((&out.f_filt[t] - &y[t]).amax() < 1e-9);
        }
    }

    #[test]
    fn single_period_smooth_equals_filter() {
        let ss = scalar_ss(0.8, 0.5, 2.0, 0.7);
        let y = vec![DVector::from_element(1, 1.3)];
        let f = filter(&y, None, &ss).unwrap();
        let s = smooth(&y, None, &ss).unwrap();
        assert_eq!(s.f_sm[0], f.f_filt[0]);
        assert_eq!(s.pi_sm[0], f.p_filt[0]);
    }

    #[test]
    fn forecasts() {
        let ss = scalar_ss(0.5, 1.0, 2.0, 1.0);
        let (f, s) = forecast_one_step(&ss, &DVector::from_element(1, 3.0), 1, 1).unwrap();
        assert_eq!(f[0], 1.5);
        assert_eq!(s[(0, 0)], 3.0);
        let zero = scalar_ss(0.0, 1.0, 2.0, 1.0);
        assert_eq!(forecast_one_step(&zero, &DVector::from_element(1, 3.0), 1, 1).unwrap().0[0], 0.0);
        let unit = scalar_ss(1.0, 1.0, 2.0, 1.0);
        assert_eq!(forecast_one_step(&unit, &DVector::from_element(1, 3.0), 1, 1).unwrap().0[0], 3.0);
    }

    #[test]
    fn obs_noise_ordering() {
        let theta = DmfmParams {
            r: DMatrix::from_element(2, 1, 1.0),
            c: DMatrix::from_element(2, 1, 1.0),
            h_diag: DVector::from_vec(vec![1.0, 2.0]),
            k_diag: DVector::from_vec(vec![3.0, 4.0]),
            ba: DMatrix::zeros(1, 1),
            qp: DMatrix::identity(1, 1),
            separate: None,
        };
        let ss = build_state_space(&theta, DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert_eq!(ss.obs_noise.as_slice(), &[3.0, 6.0, 4.0, 8.0]);
    }

    #[test]
    fn nan_observation_is_reported_with_time() {
        let ss = scalar_ss(0.5, 1.0, 1.0, 1.0);
        let y = vec![DVector::from_element(1, 0.0), DVector::from_element(1, f64::NAN)];
        match filter(&y, None, &ss) {
            Err(Error::Numerical { t, .. }) => assert_eq!(t, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
