//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub(crate) fn subvector(m: &DMatrix<f64>, rows: &[usize], col: usize) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| m[(rows[i], col)])
}

/// Ratio of smallest to largest eigenvalue of a symmetric matrix. Zero or
/// negative when the matrix is not positive definite.
pub(crate) fn reciprocal_condition_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    min / max
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Permutation matrix P with `(P x)[i] = x[order[i]]`.
pub(crate) fn permutation_matrix(order: &[usize]) -> DMatrix<f64> {
    let n = order.len();
    let mut p = DMatrix::zeros(n, n);
    for (i, &src) in order.iter().enumerate() {
        p[(i, src)] = 1.0;
    }
    p
}
