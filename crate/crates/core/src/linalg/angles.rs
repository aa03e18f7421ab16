//! Principal angles between subspaces, used as test instrumentation for
//! subspace convergence.

use crate::Scalar;

use super::{singular_values, LinalgError, Matrix};

const ORTHONORMALITY_TOL: f64 = 1e-6;

/// Principal angles (radians) between the column spans of two orthonormal
/// matrices with the same row dimension.
///
/// Returns `min(k1, k2)` angles in `[0, pi/2]`, nondecreasing. All angles
/// are zero iff one span contains the other. Uses the cosine/sine
/// combination of Bjorck-Golub so that tiny angles are resolved to full
/// precision.
pub fn principal_angles<T: Scalar>(
    q1: &Matrix<T>,
    q2: &Matrix<T>,
) -> Result<Vec<T>, LinalgError> {
    assert_eq!(q1.rows(), q2.rows(), "subspaces live in different spaces");
    check_orthonormal(q1, "q1")?;
    check_orthonormal(q2, "q2")?;

    // Order so `a` is the narrower basis; angles are symmetric.
    let (a, b) = if q1.cols() <= q2.cols() {
        (q1, q2)
    } else {
        (q2, q1)
    };
    let m = a.cols();

    // Cosines: singular values of B^T A (descending).
    let cosines = singular_values(&b.tr_matmul(a));

    // Sines: singular values of (I - B B^T) A, ascending to pair with the
    // descending cosines.
    let proj = b.matmul(&b.tr_matmul(a));
    let residual = a.sub(&proj);
    let mut sines = singular_values(&residual);
    sines.reverse();

    let half = T::from_f64(0.5);
    let mut angles = Vec::with_capacity(m);
    for i in 0..m {
        let c = cosines[i].min(T::one());
        let s = sines[i].min(T::one());
        let theta = if c * c > half { s.asin() } else { c.acos() };
        angles.push(theta);
    }
    // Cosines were descending, so angles are already nondecreasing up to
    // roundoff; enforce exactly.
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(angles)
}

fn check_orthonormal<T: Scalar>(q: &Matrix<T>, which: &'static str) -> Result<(), LinalgError> {
    let defect = q.orthonormality_defect();
    if defect.to_f64() > ORTHONORMALITY_TOL {
        return Err(LinalgError::NotOrthonormal {
            which,
            deviation: defect.to_f64(),
        });
    }
    Ok(())
}
