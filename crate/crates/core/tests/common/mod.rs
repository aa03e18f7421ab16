//! Shared test oracles, deliberately independent of the library's own
//! numerical routes: the eigensolver here is cyclic Jacobi (the library
//! uses Householder tridiagonalization + QL), and the matrix products are
//! naive triple loops.

#![allow(dead_code)]

use laser::linalg::Matrix;
use laser::{Mat, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded standard-Gaussian matrix.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    Mat::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
}

/// Seeded random orthonormal basis.
pub fn random_orthonormal(dim: usize, k: usize, seed: u64) -> Mat {
    laser::linalg::orthonormalize(&gaussian(dim, k, seed)).unwrap()
}

/// Naive O(n^3) matrix product, element by element.
pub fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols(), b.rows());
    Mat::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
    })
}

/// Brute-force Frobenius norm by direct summation.
pub fn naive_frobenius(a: &Mat) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            sum += a[(i, j)] * a[(i, j)];
        }
    }
    sum.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues desc, eigenvectors as columns). Independent of the
/// library's tridiagonal route.
pub fn jacobi_eig(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut m = a.clone();
    let mut v = Mat::identity(n);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * a.frobenius_norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * m[(p, q)]).atan2(m[(q, q)] - m[(p, p)]);
                let (s, c) = theta.sin_cos();
                // Rotate rows/cols p and q of m, and columns of v.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (m[(j, j)], v.column(j))).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let vals = pairs.iter().map(|(d, _)| *d).collect();
    let cols: Vec<Vec<f64>> = pairs.into_iter().map(|(_, c)| c).collect();
    (vals, Mat::from_columns(&cols))
}

/// A stream of batches whose rows live (mostly) in a planted subspace:
/// each row is sum_j std_j * N(0,1) * basis_j + noise_std * N(0, I).
pub struct PlantedStream {
    pub basis: Mat, // dim x r, orthonormal
    stds: Vec<f64>,
    noise_std: f64,
    rng: ChaCha8Rng,
}

impl PlantedStream {
    pub fn new(dim: usize, stds: &[f64], noise_std: f64, seed: u64) -> Self {
        PlantedStream {
            basis: random_orthonormal(dim, stds.len(), seed ^ 0xabcd_1234),
            stds: stds.to_vec(),
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Use an explicit orthonormal basis for the planted directions.
    pub fn with_basis(basis: Mat, stds: &[f64], noise_std: f64, seed: u64) -> Self {
        assert_eq!(basis.cols(), stds.len());
        PlantedStream {
            basis,
            stds: stds.to_vec(),
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self, rows: usize) -> Mat {
        let dim = self.basis.rows();
        let normal = StandardNormal;
        let mut x = Mat::zeros(rows, dim);
        for i in 0..rows {
            for (j, &std) in self.stds.iter().enumerate() {
                let c: f64 = normal.sample(&mut self.rng);
                for jj in 0..dim {
                    x[(i, jj)] += std * c * self.basis[(jj, j)];
                }
            }
            if self.noise_std > 0.0 {
                for jj in 0..dim {
                    let z: f64 = normal.sample(&mut self.rng);
                    x[(i, jj)] += self.noise_std * z;
                }
            }
        }
        x
    }
}

/// Relative Frobenius difference between two generic matrices.
pub fn rel_diff<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    let denom = a.frobenius_norm().to_f64().max(1e-300);
    a.sub(b).frobenius_norm().to_f64() / denom
}
