//! Column orthonormalization.
//!
//! Modified Gram-Schmidt with a second re-orthogonalization pass; a single
//! pass drifts enough to corrupt downstream fidelity measurements, which
//! assume exact orthonormality.

use crate::Scalar;

use super::matrix::dot;
use super::{LinalgError, Matrix};

/// Relative threshold below which a residual column is considered degenerate
/// and dropped.
pub const DEFAULT_DROP_TOL: f64 = 1e-10;

/// Orthonormalize the columns of `m` with the default drop tolerance.
pub fn orthonormalize<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    orthonormalize_with(m, T::from_f64(DEFAULT_DROP_TOL))
}

/// Orthonormalize the columns of `m`.
///
/// Columns whose residual norm falls below `drop_tol` times the largest
/// original column norm are dropped, so the output may have fewer columns.
/// The surviving columns span the same subspace as the non-degenerate
/// columns of `m`. Returns `AllColumnsDegenerate` if nothing survives.
pub fn orthonormalize_with<T: Scalar>(
    m: &Matrix<T>,
    drop_tol: T,
) -> Result<Matrix<T>, LinalgError> {
    let (rows, cols) = m.shape();
    assert!(rows >= 1 && cols >= 1);

    let columns: Vec<Vec<T>> = (0..cols).map(|j| m.column(j)).collect();
    let ref_scale = columns
        .iter()
        .map(|c| dot(c, c).sqrt())
        .fold(T::zero(), T::max);
    if ref_scale == T::zero() {
        return Err(LinalgError::AllColumnsDegenerate);
    }
    let threshold = drop_tol * ref_scale;

    let mut basis: Vec<Vec<T>> = Vec::with_capacity(cols.min(rows));
    for mut v in columns {
        if basis.len() == rows {
            break; // span is already full
        }
        for _pass in 0..2 {
            for u in &basis {
                let proj = dot(u, &v);
                for (vi, &ui) in v.iter_mut().zip(u) {
                    *vi = *vi - proj * ui;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > threshold {
            for vi in &mut v {
                *vi = *vi / norm;
            }
            basis.push(v);
        }
    }

    if basis.is_empty() {
        return Err(LinalgError::AllColumnsDegenerate);
    }
    Ok(Matrix::from_columns(&basis))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_orthonormal_columns_unchanged() {
        let m = Matrix::from_fn(3, 2, |i, j| if i == j { 1.0f64 } else { 0.0 });
        let q = orthonormalize(&m).unwrap();
        assert_eq!(q, m);
    }

    #[test]
    fn duplicate_direction_collapses_rank() {
        // Columns 2*e1 and 3*e1 span a single direction.
        let m = Matrix::from_fn(3, 2, |i, j| {
            if i == 0 {
                [2.0f64, 3.0][j]
            } else {
                0.0
            }
        });
        let q = orthonormalize(&m).unwrap();
        assert_eq!(q.cols(), 1);
        assert!((q[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let m = Matrix::<f64>::zeros(4, 2);
        assert_eq!(
            orthonormalize(&m).unwrap_err(),
            LinalgError::AllColumnsDegenerate
        );
    }
}
