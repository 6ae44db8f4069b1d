use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Separate MAR factors with `BA = B ⊗ A` and `QP = Q ⊗ P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparateMar {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmfmParams {
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub h_diag: DVector<f64>,
    pub k_diag: DVector<f64>,
    /// State transition `B ⊗ A`.
    pub ba: DMatrix<f64>,
    /// State innovation covariance `Q ⊗ P`.
    pub qp: DMatrix<f64>,
    pub separate: Option<SeparateMar>,
}

impl DmfmParams {
    pub fn p1(&self) -> usize {
        self.r.nrows()
    }
    pub fn p2(&self) -> usize {
        self.c.nrows()
    }
    pub fn k1(&self) -> usize {
        self.r.ncols()
    }
    pub fn k2(&self) -> usize {
        self.c.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k1() * self.k2();
        if self.h_diag.len() != self.p1() || self.k_diag.len() != self.p2() {
            return Err(Error::Shape("noise diagonals do not match loadings".into()));
        }
        if self.ba.shape() != (k, k) || self.qp.shape() != (k, k) {
            return Err(Error::Shape(format!("state matrices must be {k}x{k}")));
        }
        if self.h_diag.iter().chain(self.k_diag.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("noise variances must be positive".into()));
        }
        Ok(())
    }

    /// Rescales so that `mean(Hdiag) = 1`, moving the factor into `Kdiag`.
    /// The product `Kdiag ⊗ Hdiag` is unchanged.
    pub fn normalize_hk(&mut self) {
        let mean = self.h_diag.mean();
        if mean > 0.0 && mean.is_finite() {
            self.h_diag /= mean;
            self.k_diag *= mean;
        }
    }

    /// Common component `R F C'` for one factor matrix.
    pub fn signal(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * f * self.c.transpose()
    }

    /// Same model with rows and columns swapped: `Y' = C F' R' + E'`.
    pub fn transposed(&self) -> Self {
        let (k1, k2) = (self.k1(), self.k2());
        let perm = crate::linalg::commutation_perm(k1, k2);
        let d = k1 * k2;
        let conj = |m: &DMatrix<f64>| DMatrix::from_fn(d, d, |a, b| m[(perm[a], perm[b])]);
        Self {
            r: self.c.clone(),
            c: self.r.clone(),
            h_diag: self.k_diag.clone(),
            k_diag: self.h_diag.clone(),
            ba: conj(&self.ba),
            qp: conj(&self.qp),
            separate: self.separate.as_ref().map(|s| SeparateMar {
                a: s.b.clone(),
                b: s.a.clone(),
                p: s.q.clone(),
                q: s.p.clone(),
            }),
        }
    }
}
