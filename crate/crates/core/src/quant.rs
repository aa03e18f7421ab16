//! Symmetric INT8 quantization of activation blocks, with max-based and
//! 4-sigma-based scaling, plus the distortion metrics used by the
//! quantization-feasibility analysis.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::tracker::below_norm_floor;
use crate::Scalar;

const CODE_MAX: f64 = 127.0;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("reference block is degenerate (norm below floor)")]
    DegenerateReference,
    #[error("corrupt quantized block at byte {offset}: {reason}")]
    CorruptBlock { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the per-block scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingMode {
    /// scale = max|x| / 127; never clips.
    MaxAbs,
    /// scale = 4 sigma / 127 with the per-block population standard
    /// deviation; entries beyond 4 sigma saturate.
    FourSigma,
}

impl ScalingMode {
    fn tag(self) -> u8 {
        match self {
            ScalingMode::MaxAbs => 0,
            ScalingMode::FourSigma => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ScalingMode::MaxAbs),
            1 => Some(ScalingMode::FourSigma),
            _ => None,
        }
    }
}

/// INT8-encoded block: codes in [-127, 127] with one positive scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock<T> {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    scale: T,
    mode: ScalingMode,
    clip_count: usize,
}

impl<T: Scalar> QuantizedBlock<T> {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn mode(&self) -> ScalingMode {
        self.mode
    }

    /// Number of entries that saturated at +/-127. Zero for MaxAbs by
    /// construction.
    pub fn clip_count(&self) -> usize {
        self.clip_count
    }

    /// Serialize as a little-endian header {rows, cols, scale, mode,
    /// clip_count} followed by the raw code bytes.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), QuantError> {
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&self.scale.to_f64().to_le_bytes())?;
        w.write_all(&[self.mode.tag()])?;
        w.write_all(&(self.clip_count as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self.codes.iter().map(|&c| c as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, QuantError> {
        let mut u32buf = [0u8; 4];
        let mut f64buf = [0u8; 8];
        let mut u8buf = [0u8; 1];

        let corrupt = |offset: usize, reason: &str| QuantError::CorruptBlock {
            offset,
            reason: reason.to_string(),
        };

        r.read_exact(&mut u32buf)
            .map_err(|_| corrupt(0, "missing rows"))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)
            .map_err(|_| corrupt(4, "missing cols"))?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut f64buf)
            .map_err(|_| corrupt(8, "missing scale"))?;
        let scale = f64::from_le_bytes(f64buf);
        r.read_exact(&mut u8buf)
            .map_err(|_| corrupt(16, "missing mode"))?;
        let mode = ScalingMode::from_tag(u8buf[0]).ok_or_else(|| corrupt(16, "bad mode tag"))?;
        r.read_exact(&mut u32buf)
            .map_err(|_| corrupt(17, "missing clip count"))?;
        let clip_count = u32::from_le_bytes(u32buf) as usize;

        if rows == 0 || cols == 0 || !(scale > 0.0) {
            return Err(corrupt(0, "invalid header"));
        }
        let mut bytes = vec![0u8; rows * cols];
        r.read_exact(&mut bytes)
            .map_err(|_| corrupt(21, "truncated code payload"))?;
        let codes: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
        Ok(QuantizedBlock {
            rows,
            cols,
            codes,
            scale: T::from_f64(scale),
            mode,
            clip_count,
        })
    }
}

/// Quantize a block with the given scaling mode.
///
/// Degenerate blocks (norm below the floor) return all-zero codes with
/// scale 1 rather than a zero scale.
pub fn quantize<T: Scalar>(x: &Matrix<T>, mode: ScalingMode) -> QuantizedBlock<T> {
    let (rows, cols) = x.shape();
    if below_norm_floor(x) {
        return QuantizedBlock {
            rows,
            cols,
            codes: vec![0; rows * cols],
            scale: T::one(),
            mode,
            clip_count: 0,
        };
    }

    let scale = match mode {
        ScalingMode::MaxAbs => x.max_abs() / T::from_f64(CODE_MAX),
        ScalingMode::FourSigma => {
            let sigma = population_std(x);
            if sigma > T::zero() {
                T::from_f64(4.0) * sigma / T::from_f64(CODE_MAX)
            } else {
                // Constant nonzero block: fall back to max-based scaling so
                // the scale stays positive.
                x.max_abs() / T::from_f64(CODE_MAX)
            }
        }
    };

    let code_max = T::from_f64(CODE_MAX);
    let mut clip_count = 0usize;
    let codes = x
        .data()
        .iter()
        .map(|&v| {
            let raw = round_half_away(v / scale);
            let clipped = raw.max(-code_max).min(code_max);
            if raw != clipped {
                clip_count += 1;
            }
            clipped.to_f64() as i8
        })
        .collect();

    QuantizedBlock {
        rows,
        cols,
        codes,
        scale,
        mode,
        clip_count,
    }
}

/// Reconstruct the block: codes times scale.
pub fn dequantize<T: Scalar>(block: &QuantizedBlock<T>) -> Matrix<T> {
    let data = block
        .codes
        .iter()
        .map(|&c| T::from_f64(c as f64) * block.scale)
        .collect();
    Matrix::from_vec(block.rows, block.cols, data)
}

/// `|X - Xhat|_F^2 / |X|_F^2`.
pub fn relative_mse<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>) -> Result<T, QuantError> {
    assert_eq!(x.shape(), xhat.shape(), "relative_mse shape mismatch");
    if below_norm_floor(x) {
        return Err(QuantError::DegenerateReference);
    }
    Ok(x.sub(xhat).sq_frobenius_norm() / x.sq_frobenius_norm())
}

/// Distributional drift of `dequantize(quantize(X Q)) Q^T` relative to `X`.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionStats {
    /// |mean(Xhat) - mean(X)| as a percentage of the overall std of X.
    /// Activations are near zero-mean, so the raw mean is not a usable
    /// reference scale.
    pub mean_shift_pct: f64,
    /// max_j |std(Xhat_j) - std(X_j)| / std(X_j), as a percentage.
    pub std_shift_pct: f64,
    pub relative_mse: f64,
}

/// Project onto `span(Q)`, optionally quantize the coefficients, reconstruct,
/// and report the statistic shifts. `mode = None` is the identity
/// (projection-only) path.
pub fn quantized_projection_stats<T: Scalar>(
    x: &Matrix<T>,
    q: &Matrix<T>,
    mode: Option<ScalingMode>,
) -> Result<ProjectionStats, QuantError> {
    let defect = q.orthonormality_defect().to_f64();
    assert!(defect < 1e-6, "projection basis not orthonormal: {defect}");

    let z = x.matmul(q);
    let xhat = match mode {
        Some(m) => dequantize(&quantize(&z, m)).matmul_bt(q),
        None => z.matmul_bt(q),
    };

    let n = (x.rows() * x.cols()) as f64;
    let mean = |m: &Matrix<T>| m.data().iter().map(|&v| v.to_f64()).sum::<f64>() / n;
    let mean_x = mean(x);
    let mean_hat = mean(&xhat);
    let overall_var =
        x.data().iter().map(|&v| (v.to_f64() - mean_x).powi(2)).sum::<f64>() / n;
    let overall_std = overall_var.sqrt().max(f64::MIN_POSITIVE);
    let mean_shift_pct = 100.0 * (mean_hat - mean_x).abs() / overall_std;

    let mut std_shift_pct = 0.0f64;
    for j in 0..x.cols() {
        let sx = column_std(x, j);
        let sh = column_std(&xhat, j);
        if sx > 0.0 {
            std_shift_pct = std_shift_pct.max(100.0 * (sh - sx).abs() / sx);
        }
    }

    Ok(ProjectionStats {
        mean_shift_pct,
        std_shift_pct,
        relative_mse: relative_mse(x, &xhat)?.to_f64(),
    })
}

fn column_std<T: Scalar>(m: &Matrix<T>, j: usize) -> f64 {
    let n = m.rows() as f64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..m.rows() {
        let v = m[(i, j)].to_f64();
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n;
    (sumsq / n - mean * mean).max(0.0).sqrt()
}

/// Per-block population standard deviation.
fn population_std<T: Scalar>(x: &Matrix<T>) -> T {
    let n = T::from_f64((x.rows() * x.cols()) as f64);
    let mean = x.data().iter().copied().sum::<T>() / n;
    let var = x
        .data()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>()
        / n;
    var.max(T::zero()).sqrt()
}

/// Round-half-away-from-zero, fixed for cross-platform determinism.
fn round_half_away<T: Scalar>(v: T) -> T {
    v.round() // Rust's round() is half-away-from-zero
}

/// Simulated symmetric quantization at an arbitrary integer bit depth,
/// returning the dequantized values directly. Used by spectral scans that
/// compare 8/16/32-bit precision; the serializable block format stays INT8.
pub fn simulate_symmetric<T: Scalar>(x: &Matrix<T>, mode: ScalingMode, bits: u32) -> Matrix<T> {
    assert!((2..=32).contains(&bits), "bit depth must be in [2, 32]");
    if below_norm_floor(x) {
        return x.clone();
    }
    let levels = T::from_f64(((1u64 << (bits - 1)) - 1) as f64);
    let scale = match mode {
        ScalingMode::MaxAbs => x.max_abs() / levels,
        ScalingMode::FourSigma => {
            let sigma = population_std(x);
            if sigma > T::zero() {
                T::from_f64(4.0) * sigma / levels
            } else {
                x.max_abs() / levels
            }
        }
    };
    let data = x
        .data()
        .iter()
        .map(|&v| round_half_away(v / scale).max(-levels).min(levels) * scale)
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}
