//! Monte Carlo data generating process.
//!
//! `Y_t = R F_t C' + E_t`, `F_t = A F_{t-1} B' + U_t`, `E_t = D E_{t-1} G' + V_t`
//! with `U_t ~ (0, I, I)` and `V_t ~ (0, H, K)` drawn from a matrix normal or
//! a standardized matrix skew-t.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::linalg::{self, spectral_radius};
use crate::{Error, MatrixSeries, Result};

pub const BURN_IN: usize = 200;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    MatrixNormal,
    MatrixSkewT4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MissingPattern {
    None,
    /// Each cell missing independently with the given probability.
    Random(f64),
    /// 0.25: bottom-right quarter; 0.5: right half; both for the first half of the sample.
    Block(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub t: usize,
    pub p1: usize,
    pub p2: usize,
    pub k1: usize,
    pub k2: usize,
    pub mu: f64,
    pub delta: f64,
    pub tau: f64,
    pub family: Family,
    pub missing: MissingPattern,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            t: 100,
            p1: 20,
            p2: 20,
            k1: 2,
            k2: 2,
            mu: 0.7,
            delta: 0.0,
            tau: 0.0,
            family: Family::MatrixNormal,
            missing: MissingPattern::None,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.t < 2 || self.p1 == 0 || self.p2 == 0 {
            return bad("need T >= 2 and positive dimensions");
        }
        if self.k1 == 0 || self.k2 == 0 || self.k1 > self.p1 || self.k2 > self.p2 {
            return bad("factor dimensions must satisfy 1 <= k <= p");
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return bad("mu must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.delta) || !(0.0..1.0).contains(&self.tau) {
            return bad("delta and tau must lie in [0, 1)");
        }
        match self.missing {
            MissingPattern::Random(pi) if !(0.0..1.0).contains(&pi) => bad("missing share must lie in [0, 1)"),
            MissingPattern::Block(pi) if pi != 0.0 && pi != 0.25 && pi != 0.5 => bad("block missing share must be 0.25 or 0.5"),
            _ => Ok(()),
        }
    }

    pub fn nonstationary(&self) -> bool {
        self.mu == 1.0
    }
}

#[derive(Debug, Clone)]
pub struct TrueParams {
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SimTruth {
    /// Observed panel; masked cells hold NaN.
    pub y: MatrixSeries,
    /// Panel before masking.
    pub y_full: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub e: Vec<DMatrix<f64>>,
    pub params: TrueParams,
}

pub fn gen_loadings<R: Rng>(p: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0))
}

fn mar_factor<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            rng.random_range(0.7..0.9)
        } else {
            rng.random_range(0.0..0.5)
        }
    })
}

/// `(A, B)` with the spectral radius of `B ⊗ A` equal to `mu`.
pub fn gen_mar_coeffs<R: Rng>(k1: usize, k2: usize, mu: f64, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = mar_factor(k1, rng);
    let b_star = mar_factor(k2, rng);
    let nu = spectral_radius(&linalg::kron(&b_star, &a));
    (a, b_star * (mu / nu))
}

fn banded(p: usize, tau: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let diag: Vec<f64> = (0..p).map(|_| rng.random_range(0.7..1.2)).collect();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            diag[i]
        } else {
            tau.powi(i.abs_diff(j) as i32)
        }
    })
}

fn diag_uniform(p: usize, delta: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    if delta == 0.0 {
        return DMatrix::zeros(p, p);
    }
    DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| rng.random_range(0.0..delta)))
}

/// `(D, G, H, K)`: diagonal AR coefficients and banded innovation covariances.
pub fn gen_idio_coeffs<R: Rng>(
    p1: usize,
    p2: usize,
    delta: f64,
    tau: f64,
    rng: &mut R,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = diag_uniform(p1, delta, rng);
    let g = diag_uniform(p2, delta, rng);
    let h = banded(p1, tau, rng);
    let k = banded(p2, tau, rng);
    (d, g, h, k)
}

fn chol(s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !linalg::is_symmetric(s, 1e-10) {
        return Err(Error::NotSymmetric);
    }
    s.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

fn standard_normal_matrix<R: Rng>(m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng))
}

/// Draw with vec-covariance `Sc ⊗ Sr`.
pub fn sample_matrix_normal<R: Rng>(sr: &DMatrix<f64>, sc: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let (lr, lc) = (chol(sr, "row covariance")?, chol(sc, "column covariance")?);
    Ok(&lr * standard_normal_matrix(sr.nrows(), sc.nrows(), rng) * lc.transpose())
}

/// Uncorrelated, zero-mean, unit-variance skewed entries with a shared
/// chi-square mixing variable (a matrix-variate t).
fn skew_t_core<R: Rng>(m: usize, n: usize, df: f64, rng: &mut R) -> DMatrix<f64> {
    let slant = std::f64::consts::FRAC_1_SQRT_2;
    let half_normal_mean = slant * (2.0 / std::f64::consts::PI).sqrt();
    let sd = ((1.0 - half_normal_mean * half_normal_mean) * df / (df - 2.0)).sqrt();
    let chi: f64 = ChiSquared::new(df).expect("df > 0").sample(rng);
    let mix = (df / chi).sqrt();
    DMatrix::from_fn(m, n, |_, _| {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let x = slant * z0.abs() + (1.0 - slant * slant).sqrt() * z1;
        (x - half_normal_mean) * mix / sd
    })
}

/// Skewed heavy-tailed draw with mean zero and vec-covariance `Sc ⊗ Sr`.
pub fn sample_matrix_skew_t<R: Rng>(sr: &DMatrix<f64>, sc: &DMatrix<f64>, df: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(df > 2.0) {
        return Err(Error::InvalidArgument("skew-t needs df > 2 for a finite variance".into()));
    }
    let (lr, lc) = (chol(sr, "row covariance")?, chol(sc, "column covariance")?);
    Ok(&lr * skew_t_core(sr.nrows(), sc.nrows(), df, rng) * lc.transpose())
}

struct Innovation {
    lr: DMatrix<f64>,
    lc: DMatrix<f64>,
    family: Family,
}

impl Innovation {
    fn new(sr: &DMatrix<f64>, sc: &DMatrix<f64>, family: Family) -> Result<Self> {
        Ok(Self { lr: chol(sr, "row covariance")?, lc: chol(sc, "column covariance")?, family })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> DMatrix<f64> {
        let (m, n) = (self.lr.nrows(), self.lc.nrows());
        let z = match self.family {
            Family::MatrixNormal => standard_normal_matrix(m, n, rng),
            Family::MatrixSkewT4 => skew_t_core(m, n, 4.0, rng),
        };
        &self.lr * z * self.lc.transpose()
    }
}

/// Removes the unit-root component so the common trend starts at zero.
fn remove_unit_root(f: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ba = linalg::kron(b, a);
    let d = ba.nrows();
    let power = |m: &DMatrix<f64>| {
        let mut v = DVector::from_element(d, 1.0);
        for _ in 0..20_000 {
            v = m * &v;
            v /= v.norm();
        }
        v
    };
    let right = power(&ba);
    let left = power(&ba.transpose());
    let fv = linalg::vec(f);
    let coef = left.dot(&fv) / left.dot(&right);
    DMatrix::from_column_slice(f.nrows(), f.ncols(), (fv - right * coef).as_slice())
}

pub fn simulate(cfg: &DgpConfig) -> Result<SimTruth> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let r = gen_loadings(cfg.p1, cfg.k1, &mut rng);
    let c = gen_loadings(cfg.p2, cfg.k2, &mut rng);
    let (a, b) = gen_mar_coeffs(cfg.k1, cfg.k2, cfg.mu, &mut rng);
    let (d, g, h, k) = gen_idio_coeffs(cfg.p1, cfg.p2, cfg.delta, cfg.tau, &mut rng);
    let u = Innovation::new(&DMatrix::identity(cfg.k1, cfg.k1), &DMatrix::identity(cfg.k2, cfg.k2), cfg.family)?;
    let v = Innovation::new(&h, &k, cfg.family)?;

    let mut f_t = DMatrix::zeros(cfg.k1, cfg.k2);
    let mut e_t = DMatrix::zeros(cfg.p1, cfg.p2);
    for _ in 0..BURN_IN {
        f_t = &a * &f_t * b.transpose() + u.draw(&mut rng);
        e_t = &d * &e_t * g.transpose() + v.draw(&mut rng);
    }
    if cfg.nonstationary() {
        f_t = remove_unit_root(&f_t, &a, &b);
    }
    let mut f = Vec::with_capacity(cfg.t);
    let mut e = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        f_t = &a * &f_t * b.transpose() + u.draw(&mut rng);
        e_t = &d * &e_t * g.transpose() + v.draw(&mut rng);
        f.push(f_t.clone());
        e.push(e_t.clone());
    }
    let s: Vec<DMatrix<f64>> = f.iter().map(|ft| &r * ft * c.transpose()).collect();
    let y_full: Vec<DMatrix<f64>> = s.iter().zip(&e).map(|(st, et)| st + et).collect();
    let y = apply_missing(&MatrixSeries::new(y_full.clone())?, cfg.missing, &mut rng)?;
    Ok(SimTruth { y, y_full, f, s, e, params: TrueParams { r, c, a, b, d, g, h, k } })
}

/// Masks cells according to `pattern`; masked values are replaced by NaN.
pub fn apply_missing<R: Rng>(y: &MatrixSeries, pattern: MissingPattern, rng: &mut R) -> Result<MatrixSeries> {
    let (n_t, p1, p2) = (y.len(), y.p1(), y.p2());
    let mask: Vec<DMatrix<f64>> = match pattern {
        MissingPattern::None => return Ok(y.clone()),
        MissingPattern::Random(pi) => (0..n_t)
            .map(|_| DMatrix::from_fn(p1, p2, |_, _| if rng.random::<f64>() < pi { 0.0 } else { 1.0 }))
            .collect(),
        MissingPattern::Block(pi) => {
            let (row0, col0) = if pi == 0.25 {
                (p1 - p1 / 2, p2 - p2 / 2)
            } else if pi == 0.5 {
                (0, p2 - p2 / 2)
            } else if pi == 0.0 {
                (p1, p2)
            } else {
                return Err(Error::InvalidArgument("block missing share must be 0.25 or 0.5".into()));
            };
            (0..n_t)
                .map(|t| {
                    DMatrix::from_fn(p1, p2, |i, j| {
                        if t < n_t / 2 && i >= row0 && j >= col0 { 0.0 } else { 1.0 }
                    })
                })
                .collect()
        }
    };
    let data = y
        .data()
        .iter()
        .zip(&mask)
        .map(|(v, w)| v.zip_map(w, |x, o| if o == 1.0 { x } else { f64::NAN }))
        .collect();
    MatrixSeries::with_mask(data, mask)
}
