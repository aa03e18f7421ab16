//! Scalar abstraction for the numeric kernels.
//!
//! The linear-algebra, tracker, and quantization layers are generic over the
//! floating-point type; the training harness instantiates them at `f64`
//! (see the [`crate::Mat`] alias).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar usable by all numeric kernels (f32 or f64).
pub trait Scalar:
    Float + NumAssignOps + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for tolerances and literals.
    fn from_f64(v: f64) -> Self {
        Self::from(v).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion to `f64`, for logging and metrics.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
