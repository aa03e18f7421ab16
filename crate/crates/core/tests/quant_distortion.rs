//! Distortion behavior of symmetric INT8 quantization on Gaussian data:
//! relative-MSE bands, clip rates against the Gaussian tail, and
//! post-projection statistic drift on rank-dominant activations.

mod common;

use common::{gaussian, random_orthonormal};
use laser::quant::{
    dequantize, quantize, quantized_projection_stats, relative_mse, ScalingMode,
};
use laser::Mat;
use proptest::prelude::*;

#[test]
fn maxabs_relative_mse_on_a_million_gaussians() {
    let x = gaussian(1000, 1000, 9001);
    let back = dequantize(&quantize(&x, ScalingMode::MaxAbs));
    let mse = relative_mse(&x, &back).unwrap();
    assert!(
        (0.5e-4..=3e-4).contains(&mse),
        "MaxAbs relative MSE {mse:.3e} outside [0.5e-4, 3e-4]"
    );
}

#[test]
fn four_sigma_relative_mse_band_and_clip_rate() {
    let x = gaussian(1000, 1000, 9002);
    let block = quantize(&x, ScalingMode::FourSigma);
    let back = dequantize(&block);
    let mse = relative_mse(&x, &back).unwrap();
    assert!(mse <= 2.9e-4, "FourSigma relative MSE {mse:.3e} > 2.9e-4");

    // Clip fraction tracks the Gaussian tail P(|x| > 4 sigma) ~ 6.3e-5,
    // within a factor of 3.
    let frac = block.clip_count() as f64 / 1e6;
    assert!(
        (6.3e-5 / 3.0..=6.3e-5 * 3.0).contains(&frac),
        "clip fraction {frac:.3e}"
    );
}

#[test]
fn maxabs_never_clips() {
    for seed in 0..10 {
        let x = gaussian(64, 64, 9100 + seed);
        assert_eq!(quantize(&x, ScalingMode::MaxAbs).clip_count(), 0);
    }
}

/// Synthetic near-Gaussian activations with a dominant planted rank:
/// zero-mean, roughly unit variance, D = 256, rank-64 structure plus a
/// small isotropic tail.
fn rank_dominant_activations(rows: usize, seed: u64) -> (Mat, Mat) {
    let d = 256;
    let r = 64;
    let basis = random_orthonormal(d, r, seed ^ 0x5eed);
    let coeff = gaussian(rows, r, seed);
    let mut x = coeff.matmul(&basis.transpose());
    // Rescale the structured part to roughly unit per-entry variance, then
    // add a 5% tail so the data is not exactly rank-64.
    let scale = (d as f64 / r as f64).sqrt();
    x.scale(scale);
    let tail = gaussian(rows, d, seed ^ 0x7a11);
    let mut xt = tail;
    xt.scale(0.05);
    (x.add(&xt), basis)
}

#[test]
fn post_projection_statistics_shift_below_two_percent() {
    let (x, basis) = rank_dominant_activations(4096, 321);
    let stats = quantized_projection_stats(&x, &basis, Some(ScalingMode::MaxAbs)).unwrap();
    assert!(
        stats.mean_shift_pct < 2.0,
        "mean shift {:.3}%",
        stats.mean_shift_pct
    );
    assert!(
        stats.std_shift_pct < 2.0,
        "std shift {:.3}%",
        stats.std_shift_pct
    );
}

#[test]
fn projection_mse_nonincreasing_in_rank() {
    let (x, basis) = rank_dominant_activations(2048, 654);
    let mut prev = f64::INFINITY;
    for k in [16usize, 32, 64] {
        let q = basis.take_cols(k);
        let stats = quantized_projection_stats(&x, &q, Some(ScalingMode::MaxAbs)).unwrap();
        assert!(
            stats.relative_mse <= prev + 1e-12,
            "relative MSE increased at k={k}: {} after {prev}",
            stats.relative_mse
        );
        prev = stats.relative_mse;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quantization_error_bounded_by_half_scale(seed in 0u64..500, rows in 2usize..20, cols in 2usize..20) {
        let x = gaussian(rows, cols, seed);
        let block = quantize(&x, ScalingMode::MaxAbs);
        let back = dequantize(&block);
        let bound = block.scale() / 2.0 + 1e-12;
        for (a, b) in x.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= bound);
        }
    }

    #[test]
    fn relative_mse_invariant_under_global_scaling(seed in 0u64..500, exp in -6i32..7) {
        // Powers of two scale exactly, so the codes are identical and the
        // relative error is bit-preserved.
        let x = gaussian(12, 12, seed);
        let c = (2.0f64).powi(exp);
        let mut xs = x.clone();
        xs.scale(c);
        let mse_a = relative_mse(&x, &dequantize(&quantize(&x, ScalingMode::MaxAbs))).unwrap();
        let mse_b = relative_mse(&xs, &dequantize(&quantize(&xs, ScalingMode::MaxAbs))).unwrap();
        prop_assert!((mse_a - mse_b).abs() < 1e-15);
    }
}
