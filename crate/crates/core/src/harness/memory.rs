//! Analytical activation-memory accounting.
//!
//! Memory is counted as element counts times bytes per element, never by
//! allocator probes: full storage costs `n * B_eff * D` elements per site,
//! compressed storage `n * B_eff * k + D * k` (per-step coefficients plus
//! one shared basis).

use serde::Serialize;

use crate::model::{ModelConfig, SiteId};

#[derive(Debug, Clone, Serialize)]
pub struct SiteMemory {
    pub site: String,
    pub table_label: String,
    pub dim: usize,
    pub b_eff: usize,
    pub cycles: usize,
    /// Final retained rank; `None` means the site stores full activations.
    pub k_final: Option<usize>,
    pub bytes_full: u64,
    pub bytes_compressed: u64,
    pub savings_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub bytes_per_element: usize,
    pub per_site: Vec<SiteMemory>,
    pub total_bytes_full: u64,
    pub total_bytes_compressed: u64,
    pub total_savings_pct: f64,
    /// Totals restricted to sites that were actually compressed.
    pub eligible_bytes_full: u64,
    pub eligible_bytes_compressed: u64,
    pub eligible_savings_pct: f64,
}

/// Element counts and savings for one site. Savings can be negative when
/// the basis overhead exceeds the coefficient savings (k close to D).
pub fn site_memory(
    dim: usize,
    b_eff: usize,
    cycles: usize,
    k: usize,
    bytes_per_element: usize,
) -> (u64, u64, f64) {
    let full_elems = (cycles * b_eff * dim) as u64;
    let compressed_elems = (cycles * b_eff * k + dim * k) as u64;
    let savings = 1.0 - compressed_elems as f64 / full_elems as f64;
    (
        full_elems * bytes_per_element as u64,
        compressed_elems * bytes_per_element as u64,
        100.0 * savings,
    )
}

/// Build the per-site report. `final_ranks` holds `Some(k)` for compressed
/// sites and `None` for sites stored in full.
pub fn memory_report(
    cfg: &ModelConfig,
    final_ranks: &[(SiteId, Option<usize>)],
    b_eff: usize,
    bytes_per_element: usize,
) -> MemoryReport {
    let mut per_site = Vec::new();
    let mut total_full = 0u64;
    let mut total_compressed = 0u64;
    let mut eligible_full = 0u64;
    let mut eligible_compressed = 0u64;

    for &(site, k_final) in final_ranks {
        let dim = site.dim(cfg);
        let (bytes_full, bytes_compressed, savings_pct) = match k_final {
            Some(k) => site_memory(dim, b_eff, cfg.cycles, k, bytes_per_element),
            None => {
                let full = (cfg.cycles * b_eff * dim * bytes_per_element) as u64;
                (full, full, 0.0)
            }
        };
        total_full += bytes_full;
        total_compressed += bytes_compressed;
        if k_final.is_some() {
            eligible_full += bytes_full;
            eligible_compressed += bytes_compressed;
        }
        per_site.push(SiteMemory {
            site: site.as_str().to_string(),
            table_label: site.table_label(cfg),
            dim,
            b_eff,
            cycles: cfg.cycles,
            k_final,
            bytes_full,
            bytes_compressed,
            savings_pct,
        });
    }

    let pct = |full: u64, compressed: u64| {
        if full == 0 {
            0.0
        } else {
            100.0 * (1.0 - compressed as f64 / full as f64)
        }
    };
    MemoryReport {
        bytes_per_element,
        per_site,
        total_bytes_full: total_full,
        total_bytes_compressed: total_compressed,
        total_savings_pct: pct(total_full, total_compressed),
        eligible_bytes_full: eligible_full,
        eligible_bytes_compressed: eligible_compressed,
        eligible_savings_pct: pct(eligible_full, eligible_compressed),
    }
}
