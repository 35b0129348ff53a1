//! Small dense linear-algebra helpers shared by the estimators and the test engine.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

pub fn cholesky(m: &DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

pub fn spd_inverse(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, name)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Symmetric positive definite square root via eigendecomposition.
pub fn sym_sqrt(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    let (values, vectors) = sym_eigen(m);
    let top = values.max().abs();
    if values.min() <= 1e-14 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    let root = DMatrix::from_diagonal(&values.map(f64::sqrt));
    Ok(symmetrize(&(&vectors * root * vectors.transpose())))
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0.max()
}

/// Numerical column rank with the relative singular-value threshold [`RANK_TOL`].
pub fn column_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    // Singular values of R from a thin QR equal those of m, at k x k cost.
    let r = m.clone().qr().r();
    let sv = r.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// v' A^{-1} v through a Cholesky factor, nonnegative by construction.
pub fn inv_quad_form(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    let w = chol.l().solve_lower_triangular(v).expect("Cholesky factor is nonsingular");
    w.norm_squared()
}

/// Assemble the 2k x 2k matrix [[a, b], [b', c]].
pub fn assemble_blocks(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.nrows();
    let mut full = DMatrix::zeros(2 * k, 2 * k);
    full.view_mut((0, 0), (k, k)).copy_from(a);
    full.view_mut((0, k), (k, k)).copy_from(b);
    full.view_mut((k, 0), (k, k)).copy_from(&b.transpose());
    full.view_mut((k, k), (k, k)).copy_from(c);
    full
}

/// Z' diag(w) Z without forming diag(w).
pub fn weighted_cross(z: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = z.clone();
    for (mut row, &wi) in scaled.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    z.tr_mul(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m, "m").unwrap();
        assert!((&r * &r - &m).norm() < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sym_sqrt(&m, "m").is_err());
    }

    #[test]
    fn rank_detects_duplicate_column() {
        let z = DMatrix::from_row_slice(4, 3, &[1., 1., 2., 2., 2., 1., 3., 3., 0., 5., 5., 1.]);
        assert_eq!(column_rank(&z), 2);
    }

    #[test]
    fn eigen_is_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (vals, vecs) = sym_eigen(&m);
        assert_eq!(vals.as_slice(), &[1.0, 2.0, 3.0]);
        assert!((vecs.column(0)[1].abs() - 1.0).abs() < 1e-14);
    }
}
