//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, rel_step: f64) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central finite-difference Jacobian of a vector function, one column per input coordinate.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, rel_step: f64) -> DMatrix<f64> {
    let mut probe = x.clone();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        cols.push((up - down) / (2.0 * h));
    }
    DMatrix::from_columns(&cols)
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Largest absolute entry of `J + J^T`.
pub fn skew_violation(j: &DMatrix<f64>) -> f64 {
    (j + j.transpose()).amax()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest over the exact bit patterns of a matrix (column-major) and its shape.
pub(crate) fn matrix_digest(m: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_quadratic() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let g = fd_gradient(|v| v[0] * v[0] + 3.0 * v[1], &x, 1e-6);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn digest_sees_bit_changes() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let mut b = a.clone();
        b[(1, 1)] = f64::from_bits(1.0f64.to_bits() + 1);
        assert_ne!(matrix_digest(&a), matrix_digest(&b));
        assert_eq!(matrix_digest(&a), matrix_digest(&a.clone()));
    }
}
