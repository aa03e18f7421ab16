//! Gradient-fidelity instrumentation: oracle rank sweeps relating
//! activation reconstruction error to gradient error, and an empirical
//! estimate of the local Jacobian Lipschitz constant.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::linalg::truncated_svd;

use super::block::{backward, forward, Recording};
use super::compress::{CompressionMode, Payload};
use super::params::{params_distance, params_dot, Params};
use super::train::{softmax_cross_entropy, Batch};
use super::{ModelConfig, ModelError, SiteId};

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// Rank as a fraction of each site's dimension.
    pub ratio: f64,
    pub per_site_rank: BTreeMap<String, usize>,
    /// Total activation reconstruction error across all tape entries.
    pub epsilon: f64,
    /// Euclidean distance between the compressed-tape gradient and the
    /// full gradient.
    pub grad_error: f64,
    pub cosine: f64,
    /// True iff the gradients were bitwise identical.
    pub bit_identical: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CosineCheck {
    pub rows: Vec<SweepRow>,
    /// Norm of the upstream gradient at the loss (d loss / d logits).
    pub lambda_norm: f64,
    /// Empirical local Lipschitz constant of the gradient map (see
    /// [`estimate_jacobian_lipschitz`]).
    pub lipschitz: f64,
    pub grad_norm: f64,
}

/// For each rank ratio, replace every tape entry by its oracle rank-k
/// projection (k = ceil(ratio * site_dim), per entry), rerun the backward
/// pass, and report reconstruction error vs gradient error. Ratio 1 keeps
/// the tape untouched and must reproduce the gradient bit for bit.
pub fn oracle_rank_sweep(
    params: &Params,
    cfg: &ModelConfig,
    batch: &Batch,
    ratios: &[f64],
) -> Result<Vec<SweepRow>, ModelError> {
    let mut mode = CompressionMode::Full;
    let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, &mut mode)?;
    let (_, d_logits) = softmax_cross_entropy(&pass.logits, &batch.targets);
    let g_full = backward(params, cfg, &pass.recording, &d_logits)?;
    let g_norm = g_full.sq_norm().sqrt();

    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let (rec, epsilon, per_site_rank) = compress_tape_oracle(&pass.recording, cfg, ratio)?;
        let g_tilde = backward(params, cfg, &rec, &d_logits)?;
        let grad_error = params_distance(&g_tilde, &g_full);
        let cosine = params_dot(&g_tilde, &g_full)
            / (g_tilde.sq_norm().sqrt() * g_norm).max(f64::MIN_POSITIVE);
        rows.push(SweepRow {
            ratio,
            per_site_rank,
            epsilon,
            grad_error,
            cosine,
            bit_identical: g_tilde == g_full,
        });
    }
    Ok(rows)
}

/// Replace each tape entry with its top-k right-singular projection.
/// Entries whose k reaches the site dimension stay untouched (lossless).
fn compress_tape_oracle(
    rec: &Recording,
    cfg: &ModelConfig,
    ratio: f64,
) -> Result<(Recording, f64, BTreeMap<String, usize>), ModelError> {
    let mut out = rec.clone();
    let mut sq_err = 0.0;
    let mut per_site_rank = BTreeMap::new();
    for record in &mut out.cycles {
        for site in SiteId::ALL {
            let dim = site.dim(cfg);
            let k = ((dim as f64 * ratio).ceil() as usize).clamp(1, dim);
            per_site_rank.insert(site.as_str().to_string(), k);
            if k >= dim {
                continue;
            }
            let payload = record.payload_mut(site);
            let x = match payload {
                Payload::Full(x) => x.clone(),
                Payload::Compressed { .. } => {
                    return Err(ModelError::TapeMismatch(
                        "oracle sweep expects a full-precision tape".into(),
                    ))
                }
            };
            let k_eff = k.min(x.rows());
            let q = truncated_svd(&x, k_eff)?;
            let z = x.matmul(&q);
            let xhat = z.matmul_bt(&q);
            sq_err += x.sub(&xhat).sq_frobenius_norm();
            *payload = Payload::Compressed {
                z,
                basis: q.into(),
            };
        }
    }
    Ok((out, sq_err.sqrt(), per_site_rank))
}

/// Empirical local Lipschitz constant of the map from activation
/// perturbations to parameter-gradient perturbations, normalized by the
/// upstream gradient norm: max over random probes of
/// `|g(X + eta) - g(X)| / (|eta| * |lambda|)`.
pub fn estimate_jacobian_lipschitz(
    params: &Params,
    cfg: &ModelConfig,
    batch: &Batch,
    probes: usize,
    rel_magnitude: f64,
    seed: u64,
) -> Result<f64, ModelError> {
    let mut mode = CompressionMode::Full;
    let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, &mut mode)?;
    let (_, d_logits) = softmax_cross_entropy(&pass.logits, &batch.targets);
    let lambda_norm = d_logits.frobenius_norm();
    let g_base = backward(params, cfg, &pass.recording, &d_logits)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut best = 0.0f64;
    for _ in 0..probes {
        let mut rec = pass.recording.clone();
        let mut sq_eta = 0.0;
        for record in &mut rec.cycles {
            for site in SiteId::ALL {
                if let Payload::Full(x) = record.payload_mut(site) {
                    let rms =
                        (x.sq_frobenius_norm() / (x.rows() * x.cols()) as f64).sqrt();
                    let sigma = rel_magnitude * rms;
                    for v in x.data_mut() {
                        let z: f64 = normal.sample(&mut rng);
                        let eta = sigma * z;
                        *v += eta;
                        sq_eta += eta * eta;
                    }
                }
            }
        }
        let g_pert = backward(params, cfg, &rec, &d_logits)?;
        let ratio = params_distance(&g_pert, &g_base) / (sq_eta.sqrt() * lambda_norm);
        best = best.max(ratio);
    }
    Ok(best)
}

/// Gradient-cosine table over a rank sweep, together with the empirical
/// constants needed to evaluate the cosine lower bound
/// `1 - 2 L |lambda| eps / |g|`.
pub fn gradient_cosine_check(
    params: &Params,
    cfg: &ModelConfig,
    batch: &Batch,
    ratios: &[f64],
    seed: u64,
) -> Result<CosineCheck, ModelError> {
    let rows = oracle_rank_sweep(params, cfg, batch, ratios)?;
    let mut mode = CompressionMode::Full;
    let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, &mut mode)?;
    let (_, d_logits) = softmax_cross_entropy(&pass.logits, &batch.targets);
    let g = backward(params, cfg, &pass.recording, &d_logits)?;
    let lipschitz = estimate_jacobian_lipschitz(params, cfg, batch, 5, 0.05, seed)?;
    Ok(CosineCheck {
        rows,
        lambda_norm: d_logits.frobenius_norm(),
        lipschitz,
        grad_norm: g.sq_norm().sqrt(),
    })
}
