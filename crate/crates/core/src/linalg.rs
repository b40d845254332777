//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::rng::{self, StreamRng};

/// Draws a `rows × cols` matrix of i.i.d. N(0, std²) entries, filled row by row.
pub fn gaussian_matrix(rng: &mut StreamRng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = std * rng::normal(rng);
        }
    }
    m
}

/// Q factor of a thin QR with columns multiplied by the sign of R's diagonal,
/// so that a Gaussian input yields a Haar-distributed frame.
pub fn orthonormal_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_orthogonal(rng: &mut StreamRng, n: usize) -> DMatrix<f64> {
    orthonormal_columns(gaussian_matrix(rng, n, n, 1.0))
}

/// Makes each column's largest-magnitude entry positive (first index wins ties).
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Orthonormal basis of the orthogonal complement of the columns of `basis`
/// (which must be orthonormal), via a full Householder QR.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let p = basis.nrows();
    let m = basis.ncols();
    if m == 0 {
        return DMatrix::identity(p, p);
    }
    if m >= p {
        return DMatrix::zeros(p, 0);
    }
    let qr = basis.clone().qr();
    // Qᵀ·I, then transpose, gives the full p × p orthogonal factor.
    let mut full = DMatrix::identity(p, p);
    qr.q_tr_mul(&mut full);
    full.transpose().columns(m, p - m).into_owned()
}

/// Zeroes entries below `64·ε` in magnitude, which only arise from roundoff
/// in orthonormal bases.
pub fn flush_roundoff(m: &mut DMatrix<f64>) {
    let floor = 64.0 * f64::EPSILON;
    for v in m.iter_mut() {
        if v.abs() < floor {
            *v = 0.0;
        }
    }
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_row_major(rows: &[Vec<f64>], ncols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn frobenius_relative(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm()
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut rng = rng::stream(3, &[0]);
        let b = orthonormal_columns(gaussian_matrix(&mut rng, 9, 4, 1.0));
        let c = orthogonal_complement(&b);
        assert_eq!(c.shape(), (9, 5));
        assert!(max_abs(&(c.transpose() * &c - DMatrix::identity(5, 5))) < 1e-12);
        assert!(max_abs(&(b.transpose() * &c)) < 1e-12);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = rng::stream(5, &[0]);
        let q = random_orthogonal(&mut rng, 12);
        assert!(max_abs(&(q.transpose() * &q - DMatrix::identity(12, 12))) < 1e-12);
    }

    #[test]
    fn sign_fix_makes_largest_entry_positive() {
        let mut m = DMatrix::from_row_slice(3, 2, &[0.1, 0.5, -0.9, -0.6, 0.3, 0.2]);
        fix_column_signs(&mut m);
        assert!(m[(1, 0)] > 0.0);
        assert!(m[(1, 1)] > 0.0);
    }
}
