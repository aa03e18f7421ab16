//! LASER: dynamic low-rank activation compression for training weight-tied
//! recursive models.
//!
//! The crate is organized around a small set of layers:
//!
//! * [`linalg`] - dense kernels (orthonormalization, truncated SVD through
//!   the Gram route, principal angles), generic over the scalar type.
//! * [`tracker`] - the per-site subspace tracker: compress, fidelity check,
//!   power-iteration update, subspace expansion, and hard reset.
//! * [`quant`] - symmetric INT8 quantization of activation blocks plus
//!   distortion metrics.
//! * [`model`] - a desk-scale weight-tied recursive transformer with a
//!   hand-written backward pass that can evaluate Jacobians at reconstructed
//!   activations.
//! * [`maze`] - procedural maze-pathfinding datasets with unique
//!   shortest-path targets.
//! * [`harness`] - experiment orchestration: runs, memory accounting,
//!   spectral scans, metrics emission.

pub mod harness;
pub mod linalg;
pub mod model;
pub mod maze;
pub mod quant;
pub mod tracker;

mod scalar;

pub use scalar::Scalar;

/// Concrete matrix type used by the model and harness.
pub type Mat = linalg::Matrix<f64>;
/// Single-precision alias for callers that want the smaller footprint.
pub type Mat32 = linalg::Matrix<f32>;
