//! Truncated SVD through the Gram matrix.
//!
//! Only right singular vectors are ever needed here, so instead of a full
//! bidiagonal SVD we eigendecompose whichever of `X^T X` or `X X^T` is
//! smaller and recover the right singular basis from it.

use crate::Scalar;

use super::matrix::dot;
use super::{symmetric_eig, LinalgError, Matrix};

/// Top-`k` right singular vectors of `x`, as the columns of a `cols x k`
/// orthonormal matrix ordered by descending singular value.
///
/// Each column is sign-normalized so that its largest-magnitude entry is
/// positive, making the output deterministic.
pub fn truncated_svd<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<Matrix<T>, LinalgError> {
    let (b, d) = x.shape();
    let max_rank = b.min(d);
    if k == 0 || k > max_rank {
        return Err(LinalgError::RankTooLarge {
            requested: k,
            rows: b,
            cols: d,
        });
    }

    let mut q = if d <= b {
        // Right singular vectors are the eigenvectors of X^T X.
        let (_, vecs) = symmetric_eig(&x.gram());
        vecs.take_cols(k)
    } else {
        // Recover right vectors from the smaller X X^T eigenproblem.
        let (_, u) = symmetric_eig(&x.outer_gram());
        let scale = x.frobenius_norm();
        let tiny = scale * T::from_f64(1e-13);
        let mut columns: Vec<Vec<T>> = Vec::with_capacity(k);
        for i in 0..k {
            let ui = u.column(i);
            let mut vi = x.tr_vecmul(&ui);
            let norm = dot(&vi, &vi).sqrt();
            if norm > tiny {
                for e in &mut vi {
                    *e = *e / norm;
                }
                columns.push(vi);
            } else {
                // Null singular direction: complete with any unit vector
                // orthogonal to what we have (canonical-basis candidates).
                columns.push(complete_column(&columns, d));
            }
        }
        Matrix::from_columns(&columns)
    };

    sign_normalize_columns(&mut q);
    Ok(q)
}

/// Singular values of `x` in descending order (square roots of the Gram
/// eigenvalues, clamped at zero).
pub fn singular_values<T: Scalar>(x: &Matrix<T>) -> Vec<T> {
    let (b, d) = x.shape();
    let gram = if d <= b { x.gram() } else { x.outer_gram() };
    let (vals, _) = symmetric_eig(&gram);
    vals.into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
}

fn complete_column<T: Scalar>(existing: &[Vec<T>], dim: usize) -> Vec<T> {
    for cand in 0..dim {
        let mut v = vec![T::zero(); dim];
        v[cand] = T::one();
        for _pass in 0..2 {
            for u in existing {
                let proj = dot(u, &v);
                for (vi, &ui) in v.iter_mut().zip(u) {
                    *vi = *vi - proj * ui;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > T::from_f64(0.5) {
            for e in &mut v {
                *e = *e / norm;
            }
            return v;
        }
    }
    unreachable!("fewer than dim orthonormal columns always admit a completion");
}

fn sign_normalize_columns<T: Scalar>(q: &mut Matrix<T>) {
    for j in 0..q.cols() {
        let mut best_idx = 0;
        let mut best_abs = T::zero();
        for i in 0..q.rows() {
            let a = q[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best_idx = i;
            }
        }
        if q[(best_idx, j)] < T::zero() {
            for i in 0..q.rows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0f64, -2.0, 0.5];
        let v = [3.0f64, 4.0];
        let x = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let q = truncated_svd(&x, 1).unwrap();
        let vn = 5.0;
        for j in 0..2 {
            assert!((q[(j, 0)].abs() - v[j].abs() / vn).abs() < 1e-12);
        }
        // Sign convention: largest-magnitude entry positive.
        assert!(q[(1, 0)] > 0.0);
    }

    #[test]
    fn diagonal_spectrum_spans_leading_axes() {
        let x = Matrix::from_fn(3, 3, |i, j| {
            if i == j {
                [3.0f64, 2.0, 1.0][i]
            } else {
                0.0
            }
        });
        let q = truncated_svd(&x, 2).unwrap();
        // Columns must span {e1, e2}: third coordinate is zero.
        assert!(q[(2, 0)].abs() < 1e-12);
        assert!(q[(2, 1)].abs() < 1e-12);
        assert!(q.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn rank_too_large_rejected() {
        let x = Matrix::<f64>::zeros(4, 3);
        assert!(matches!(
            truncated_svd(&x, 4),
            Err(LinalgError::RankTooLarge { requested: 4, .. })
        ));
    }

    #[test]
    fn wide_matrix_completion_path() {
        // 2x5 rank-1 matrix, k = 2 forces a completed second column.
        let x = Matrix::from_fn(2, 5, |i, j| ((i + 1) * (j + 1)) as f64);
        let q = truncated_svd(&x, 2).unwrap();
        assert_eq!(q.shape(), (5, 2));
        assert!(q.orthonormality_defect() < 1e-10);
    }
}
