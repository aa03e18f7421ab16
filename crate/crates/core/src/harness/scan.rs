//! Spectral scan: for each checkpoint, collect site activations on a fixed
//! probe set, compute the oracle truncated SVD at each requested rank, and
//! report the reconstruction cosine fidelity, optionally after simulated
//! symmetric quantization of the coefficients at each bit depth.

use serde::Serialize;

use crate::linalg::truncated_svd;
use crate::maze::MazeInstance;
use crate::model::{Batch, ModelConfig, Params, SiteId};
use crate::quant::{simulate_symmetric, ScalingMode};
use crate::Mat;

use super::run::collect_site_activations;
use super::HarnessError;

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub checkpoint_step: usize,
    pub site: String,
    pub rank: usize,
    /// Bit depth of the coefficient quantization; `None` = exact.
    pub bits: Option<u32>,
    pub fidelity: f64,
}

/// Scan fidelity curves across checkpoints.
///
/// `checkpoints` are (step, params) pairs, at least two of them; the probe
/// set is a fixed slice of instances shared across checkpoints.
pub fn spectral_scan(
    checkpoints: &[(usize, Params)],
    cfg: &ModelConfig,
    probe: &[MazeInstance],
    ranks: &[usize],
    bit_depths: &[u32],
) -> Result<Vec<ScanRow>, HarnessError> {
    if checkpoints.len() < 2 {
        return Err(HarnessError::Config(
            "spectral scan needs at least 2 checkpoints".into(),
        ));
    }
    if probe.is_empty() || ranks.is_empty() {
        return Err(HarnessError::Config(
            "probe set and rank list must be nonempty".into(),
        ));
    }

    let batch = Batch::from_instances(probe);
    let mut rows = Vec::new();
    for (step, params) in checkpoints {
        let activations = collect_site_activations(params, cfg, &batch)?;
        for site in SiteId::ALL {
            let x = &activations[&site];
            let x_norm = x.frobenius_norm();
            for &rank in ranks {
                let k = rank.min(site.dim(cfg)).min(x.rows());
                let q = truncated_svd(x, k).map_err(crate::model::ModelError::Linalg)?;
                let z = x.matmul(&q);
                rows.push(ScanRow {
                    checkpoint_step: *step,
                    site: site.as_str().to_string(),
                    rank,
                    bits: None,
                    fidelity: cosine_via_coefficients(&z, &z, x_norm),
                });
                for &bits in bit_depths {
                    let z_hat = simulate_symmetric(&z, ScalingMode::MaxAbs, bits);
                    rows.push(ScanRow {
                        checkpoint_step: *step,
                        site: site.as_str().to_string(),
                        rank,
                        bits: Some(bits),
                        fidelity: cosine_via_coefficients(&z, &z_hat, x_norm),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Cosine similarity between `X` and `Zhat Q^T` without materializing the
/// reconstruction: with orthonormal `Q`, `<X, Zhat Q^T> = <X Q, Zhat>` and
/// `|Zhat Q^T| = |Zhat|`.
fn cosine_via_coefficients(z: &Mat, z_hat: &Mat, x_norm: f64) -> f64 {
    let inner: f64 = z
        .data()
        .iter()
        .zip(z_hat.data())
        .map(|(&a, &b)| a * b)
        .sum();
    let denom = x_norm * z_hat.frobenius_norm();
    if denom <= 0.0 {
        0.0
    } else {
        inner / denom
    }
}

/// Render scan rows as CSV.
pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from("checkpoint_step,site,rank,bits,fidelity\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.checkpoint_step,
            r.site,
            r.rank,
            r.bits.map_or("none".to_string(), |b| b.to_string()),
            r.fidelity
        ));
    }
    out
}
