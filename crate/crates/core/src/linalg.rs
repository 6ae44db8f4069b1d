//! Matrix operators used throughout the model algebra.
//!
//! All storage is column-major, so `vec` is a plain copy of the nalgebra
//! buffer and `vec(X Z Y) = (Y' ⊗ X) vec(Z)` holds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Dense operators above this size are applied as permutations or selections.
pub const DENSE_LIMIT: usize = 64;

pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Shape(format!(
            "cannot unvec length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "hadamard of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

/// Index map of the commutation matrix for an `n x m` matrix:
/// `(K vec X)[a] = (vec X)[perm[a]]`.
pub fn commutation_perm(n: usize, m: usize) -> Vec<usize> {
    let mut perm = vec![0; n * m];
    for i in 0..n {
        for j in 0..m {
            perm[j + i * m] = i + j * n;
        }
    }
    perm
}

/// `K_{nm}` with `K_{nm} vec(X) = vec(X')` for every `n x m` matrix `X`.
pub fn commutation_matrix(n: usize, m: usize) -> DMatrix<f64> {
    let perm = commutation_perm(n, m);
    let mut k = DMatrix::zeros(n * m, n * m);
    for (a, &src) in perm.iter().enumerate() {
        k[(a, src)] = 1.0;
    }
    k
}

/// `K_{nm} v` without forming the matrix.
pub fn commute_vec(v: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
    let perm = commutation_perm(n, m);
    DVector::from_iterator(v.len(), perm.iter().map(|&s| v[s]))
}

/// `K_{nm} M K_{nm}'` without forming the matrix.
pub fn commute_sandwich(mat: &DMatrix<f64>, n: usize, m: usize) -> DMatrix<f64> {
    let perm = commutation_perm(n, m);
    let d = n * m;
    DMatrix::from_fn(d, d, |a, b| mat[(perm[a], perm[b])])
}

/// Star product: `sum_ij a_ij B_ij` where `B_ij` is the `(i,j)` block of size `p x q`.
pub fn star(a: &DMatrix<f64>, b: &DMatrix<f64>, p: usize, q: usize) -> Result<DMatrix<f64>> {
    let (m, n) = a.shape();
    if b.nrows() != m * p || b.ncols() != n * q {
        return Err(Error::Shape(format!(
            "star: {}x{} does not split into {m}x{n} blocks of {p}x{q}",
            b.nrows(),
            b.ncols()
        )));
    }
    let mut out = DMatrix::zeros(p, q);
    for j in 0..n {
        for i in 0..m {
            let w = a[(i, j)];
            if w == 0.0 {
                continue;
            }
            out += b.view((i * p, j * q), (p, q)) * w;
        }
    }
    Ok(out)
}

/// The `(i,j)` special partition of an `mp x nq` matrix (0-based `i < p`, `j < q`):
/// entry `(r,s)` is `A[r p + i, s q + j]`.
pub fn special_partition(
    a: &DMatrix<f64>,
    i: usize,
    j: usize,
    m: usize,
    n: usize,
    p: usize,
    q: usize,
) -> Result<DMatrix<f64>> {
    if a.nrows() != m * p || a.ncols() != n * q {
        return Err(Error::Shape(format!(
            "special_partition: {}x{} is not {m}*{p} x {n}*{q}",
            a.nrows(),
            a.ncols()
        )));
    }
    if i >= p || j >= q {
        return Err(Error::InvalidArgument(format!(
            "partition index ({i},{j}) outside {p}x{q}"
        )));
    }
    Ok(DMatrix::from_fn(m, n, |r, s| a[(r * p + i, s * q + j)]))
}

/// `E^{(i,j)}_{p,q}`: the `p x q` matrix with a single one at `(i,j)`.
pub fn basis_matrix(i: usize, j: usize, p: usize, q: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(p, q);
    e[(i, j)] = 1.0;
    e
}

pub fn diag_stack(w: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&vec(w))
}

#[derive(Debug, Clone)]
pub struct SymEigPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Leading `k` eigenpairs of a symmetric matrix, largest first. Each
/// eigenvector has its largest-magnitude entry positive.
pub fn eig_sym_topk(m: &DMatrix<f64>, k: usize) -> Result<SymEigPair> {
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotSymmetric);
    }
    let n = m.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k={k} with dimension {n}")));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = DVector::zeros(k);
    let mut vectors = DMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values[c] = eig.eigenvalues[idx];
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let mut best = 0;
        for r in 1..n {
            if v[r].abs() > v[best].abs() {
                best = r;
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    Ok(SymEigPair { values, vectors })
}

/// Solves `S X = B` for symmetric positive (semi)definite `S`. Falls back to a
/// ridge `ridge * I` when the Cholesky factorization fails; the returned flag
/// reports whether the ridge was needed.
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, bool)> {
    let sym = symmetrize(s);
    if let Some(ch) = sym.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let n = sym.nrows();
    let scale = sym.diagonal().amax().max(1.0);
    let mut lambda = ridge * scale;
    for _ in 0..12 {
        let reg = &sym + DMatrix::identity(n, n) * lambda;
        if let Some(ch) = reg.cholesky() {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok((x, true));
            }
        }
        lambda *= 10.0;
    }
    Err(Error::NotPositiveDefinite(
        "system stayed singular after ridge regularization".into(),
    ))
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Symmetrizes and raises every eigenvalue to at least `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return symmetrize(m);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&vals) * v.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn vec_is_column_major() {
        assert_eq!(vec(&m(1, 1, &[5.0])).as_slice(), &[5.0]);
        assert_eq!(vec(&m(2, 2, &[1., 2., 3., 4.])).as_slice(), &[1., 3., 2., 4.]);
        let back = unvec(&DVector::from_vec(vec![1., 3., 2., 4.]), 2, 2).unwrap();
        assert_eq!(back, m(2, 2, &[1., 2., 3., 4.]));
        assert_eq!(unvec(&DVector::from_vec(vec![7.0]), 1, 1).unwrap()[(0, 0)], 7.0);
        assert!(unvec(&DVector::from_vec(vec![1., 2., 3.]), 2, 2).is_err());
    }

    #[test]
    fn small_kron_and_hadamard() {
        let k = kron(&m(1, 2, &[1., 2.]), &m(2, 1, &[0., 3.]));
        assert_eq!(k, m(2, 2, &[0., 0., 3., 6.]));
        let b = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(kron(&DMatrix::identity(1, 1), &b), b);
        let h = hadamard(&m(2, 2, &[1., 2., 3., 4.]), &m(2, 2, &[0., 1., 1., 0.])).unwrap();
        assert_eq!(h, m(2, 2, &[0., 2., 3., 0.]));
        assert!(hadamard(&b, &h).is_err());
    }

    #[test]
    fn commutation_small() {
        assert_eq!(commutation_matrix(1, 1), m(1, 1, &[1.0]));
        let x = m(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(commutation_matrix(2, 2) * vec(&x), vec(&x.transpose()));
    }

    #[test]
    fn star_rejects_bad_blocks() {
        let a = DMatrix::from_element(2, 2, 1.0);
        assert!(star(&a, &DMatrix::zeros(5, 4), 2, 2).is_err());
        let b = DMatrix::from_fn(3, 2, |i, j| (i + 10 * j) as f64);
        assert_eq!(star(&m(1, 1, &[1.0]), &b, 3, 2).unwrap(), b);
    }

    #[test]
    fn special_partition_bounds() {
        let a = DMatrix::from_fn(4, 4, |i, j| (10 * i + j) as f64);
        let blk = special_partition(&a, 0, 0, 2, 2, 2, 2).unwrap();
        assert_eq!(blk, m(2, 2, &[0., 2., 20., 22.]));
        assert!(special_partition(&a, 2, 0, 2, 2, 2, 2).is_err());
        assert_eq!(special_partition(&a, 0, 0, 4, 4, 1, 1).unwrap(), a);
    }

    #[test]
    fn diag_stack_of_ones_is_identity() {
        assert_eq!(diag_stack(&DMatrix::from_element(2, 2, 1.0)), DMatrix::identity(4, 4));
    }

    #[test]
    fn eig_diag_and_identity() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3., 2., 1.]));
        let e = eig_sym_topk(&d, 2).unwrap();
        assert_eq!(e.values.as_slice(), &[3., 2.]);
        assert!((e.vectors.column(0) - DVector::from_vec(vec![1., 0., 0.])).amax() < 1e-14);
        assert!((e.vectors.column(1) - DVector::from_vec(vec![0., 1., 0.])).amax() < 1e-14);

        let i3 = DMatrix::<f64>::identity(3, 3);
        let e = eig_sym_topk(&i3, 1).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        let v = e.vectors.column(0);
        assert!((&i3 * v - v).amax() < 1e-14);

        assert!(eig_sym_topk(&m(2, 2, &[1., 2., 0., 1.]), 1).is_err());
        assert!(eig_sym_topk(&i3, 4).is_err());
    }

    #[test]
    fn spd_solve_ridges_singular() {
        let s = m(2, 2, &[1., 1., 1., 1.]);
        let (_, ridged) = spd_solve(&s, &DMatrix::identity(2, 2), 1e-10).unwrap();
        assert!(ridged);
        let (x, ridged) = spd_solve(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2), 1e-10).unwrap();
        assert!(!ridged);
        assert_eq!(x, DMatrix::identity(2, 2));
    }

    #[test]
    fn radius_of_rotation_scaled() {
        let r = m(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&r) - 0.5).abs() < 1e-12);
    }
}
