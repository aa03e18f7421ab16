//! Minimal dense linear-algebra kernels: dense matrices, orthonormalization,
//! truncated SVD via the Gram route, and principal angles between subspaces.
//!
//! Everything here is pure and operates on immutable inputs; there is no
//! shared mutable state.

mod angles;
mod eig;
mod matrix;
mod orth;
mod svd;

pub use angles::principal_angles;
pub use eig::symmetric_eig;
pub use matrix::Matrix;
pub use orth::{orthonormalize, orthonormalize_with, DEFAULT_DROP_TOL};
pub use svd::{singular_values, truncated_svd};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    /// Every column of the input dropped below the degeneracy threshold.
    #[error("all columns degenerate (zero or near-zero input)")]
    AllColumnsDegenerate,
    /// Requested rank exceeds what the matrix shape admits.
    #[error("rank {requested} too large for a {rows}x{cols} matrix")]
    RankTooLarge {
        requested: usize,
        rows: usize,
        cols: usize,
    },
    /// An input that must be orthonormal is not (within 1e-6).
    #[error("input {which} is not orthonormal (max |QtQ - I| = {deviation})")]
    NotOrthonormal { which: &'static str, deviation: f64 },
}

/// Frobenius norm of a matrix; zero iff the matrix is all zeros.
pub fn frobenius_norm<T: crate::Scalar>(x: &Matrix<T>) -> T {
    x.frobenius_norm()
}
