use nalgebra::DMatrix;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub d_r: f64,
    pub d_c: f64,
    pub mse_s: f64,
    pub mse_y0: Option<f64>,
}

fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, k) = a.shape();
    if k == 0 || k > m {
        return Err(Error::RankDeficient(format!("{m}x{k} basis")));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * scale * (m as f64).sqrt()) {
        return Err(Error::RankDeficient("columns are linearly dependent".into()));
    }
    Ok(qr.q())
}

/// Spectral norm of the difference between the projectors on the column
/// spaces of `a` and `ahat`.
pub fn col_space_distance(a: &DMatrix<f64>, ahat: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != ahat.nrows() {
        return Err(Error::Shape("bases live in different dimensions".into()));
    }
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(ahat)?;
    let diff = &qa * qa.transpose() - &qb * qb.transpose();
    Ok(diff.singular_values().max())
}

fn check_same(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) || a.is_empty() {
        return Err(Error::Shape("series differ in length or shape".into()));
    }
    Ok(())
}

/// `(T p1 p2)^{-1} Σ ‖Ŝ_t − S_t‖²_F`.
pub fn mse_signal(s_true: &[DMatrix<f64>], s_hat: &[DMatrix<f64>]) -> Result<f64> {
    check_same(s_true, s_hat)?;
    let n = (s_true.len() * s_true[0].len()) as f64;
    Ok(s_true.iter().zip(s_hat).map(|(s, h)| (h - s).norm_squared()).sum::<f64>() / n)
}

/// `(T p1 p2)^{-1} Σ ‖(Ŝ_t − Y_t) ∘ (1 − W_t)‖²_F`, normalized by the full
/// panel size rather than the number of missing cells.
pub fn mse_missing(y: &[DMatrix<f64>], s_hat: &[DMatrix<f64>], w: &[DMatrix<f64>]) -> Result<f64> {
    check_same(y, s_hat)?;
    check_same(y, w)?;
    let n = (y.len() * y[0].len()) as f64;
    let mut total = 0.0;
    for t in 0..y.len() {
        for idx in 0..y[t].len() {
            if w[t][idx] == 0.0 {
                total += (s_hat[t][idx] - y[t][idx]).powi(2);
            }
        }
    }
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_lines_are_at_distance_one() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((col_space_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-14);
        assert!(col_space_distance(&e1, &e1).unwrap() < 1e-14);
    }

    #[test]
    fn rank_deficient_rejected() {
        let a = DMatrix::from_row_slice(3, 2, &[1., 2., 2., 4., 3., 6.]);
        assert!(matches!(col_space_distance(&a, &a), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn mse_arithmetic() {
        let s = vec![DMatrix::zeros(2, 2); 3];
        let h = vec![DMatrix::from_element(2, 2, 1.0); 3];
        assert_eq!(mse_signal(&s, &s).unwrap(), 0.0);
        assert_eq!(mse_signal(&s, &h).unwrap(), 1.0);

        let y = vec![DMatrix::zeros(2, 2)];
        let mut sh = DMatrix::zeros(2, 2);
        sh[(1, 0)] = 2.0;
        let mut w = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(mse_missing(&y, &[sh.clone()], &[w.clone()]).unwrap(), 0.0);
        w[(1, 0)] = 0.0;
        assert_eq!(mse_missing(&y, &[sh], &[w]).unwrap(), 1.0);
    }
}
