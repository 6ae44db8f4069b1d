use nalgebra::{DMatrix, DVector};

use crate::{linalg, Error, Result};

/// A length-`T` sequence of `p1 x p2` observations with an optional mask.
///
/// Mask entries are `1.0` for observed and `0.0` for missing cells. Values
/// under a zero mask are never read and may hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    data: Vec<DMatrix<f64>>,
    mask: Option<Vec<DMatrix<f64>>>,
}

impl MatrixSeries {
    pub fn new(data: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::build(data, None)
    }

    pub fn with_mask(data: Vec<DMatrix<f64>>, mask: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::build(data, Some(mask))
    }

    fn build(data: Vec<DMatrix<f64>>, mask: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::Shape("empty series".into()));
        };
        let shape = first.shape();
        if data.iter().any(|y| y.shape() != shape) {
            return Err(Error::Shape("observations differ in shape".into()));
        }
        if let Some(w) = &mask {
            if w.len() != data.len() || w.iter().any(|m| m.shape() != shape) {
                return Err(Error::Shape("mask does not match data".into()));
            }
            if w.iter().flat_map(|m| m.iter()).any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
            }
        }
        for (t, y) in data.iter().enumerate() {
            for (idx, v) in y.iter().enumerate() {
                let observed = mask.as_ref().is_none_or(|w| w[t][idx] == 1.0);
                if observed && !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite observed value at t={t}"
                    )));
                }
            }
        }
        // An all-ones mask carries no information.
        let mask = mask.filter(|w| w.iter().any(|m| m.iter().any(|&v| v == 0.0)));
        Ok(Self { data, mask })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn p1(&self) -> usize {
        self.data[0].nrows()
    }

    pub fn p2(&self) -> usize {
        self.data[0].ncols()
    }

    pub fn data(&self) -> &[DMatrix<f64>] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[DMatrix<f64>]> {
        self.mask.as_deref()
    }

    pub fn has_missing(&self) -> bool {
        self.mask.is_some()
    }

    pub fn missing_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |w| w.iter().flat_map(|m| m.iter()).filter(|&&v| v == 0.0).count())
    }

    pub fn is_observed(&self, t: usize, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|w| w[t][(i, j)] == 1.0)
    }

    /// Mask at `t`, all ones when nothing is missing.
    pub fn weight(&self, t: usize) -> DMatrix<f64> {
        match &self.mask {
            Some(w) => w[t].clone(),
            None => DMatrix::from_element(self.p1(), self.p2(), 1.0),
        }
    }

    /// Observations with missing cells replaced by zero.
    pub fn zero_filled(&self) -> Vec<DMatrix<f64>> {
        match &self.mask {
            None => self.data.clone(),
            Some(w) => self
                .data
                .iter()
                .zip(w)
                .map(|(y, m)| y.zip_map(m, |v, o| if o == 1.0 { v } else { 0.0 }))
                .collect(),
        }
    }

    /// Column-major vectorized observations and masks.
    pub fn vectorized(&self) -> (Vec<DVector<f64>>, Option<Vec<DVector<f64>>>) {
        let y = self.data.iter().map(linalg::vec).collect();
        let w = self.mask.as_ref().map(|w| w.iter().map(linalg::vec).collect());
        (y, w)
    }

    pub fn transpose(&self) -> Self {
        Self {
            data: self.data.iter().map(|y| y.transpose()).collect(),
            mask: self.mask.as_ref().map(|w| w.iter().map(|m| m.transpose()).collect()),
        }
    }

    /// Sub-panel on the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])]);
        let data = self.data.iter().map(pick).collect();
        let mask = self.mask.as_ref().map(|w| w.iter().map(pick).collect());
        Self::build(data, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_mask_is_dropped() {
        let y = vec![DMatrix::zeros(2, 3); 2];
        let s = MatrixSeries::with_mask(y, vec![DMatrix::from_element(2, 3, 1.0); 2]).unwrap();
        assert!(!s.has_missing());
    }

    #[test]
    fn masked_nan_is_allowed_observed_nan_is_not() {
        let mut y = DMatrix::zeros(2, 2);
        y[(0, 1)] = f64::NAN;
        let mut w = DMatrix::from_element(2, 2, 1.0);
        assert!(MatrixSeries::new(vec![y.clone()]).is_err());
        w[(0, 1)] = 0.0;
        let s = MatrixSeries::with_mask(vec![y], vec![w]).unwrap();
        assert_eq!(s.missing_count(), 1);
        assert_eq!(s.zero_filled()[0][(0, 1)], 0.0);
    }
}
