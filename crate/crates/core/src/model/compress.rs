//! What happens to each captured activation: stored in full, compressed by
//! the adaptive tracker, or projected onto an oracle / static / random
//! basis. The forward pass hands every site tensor to the active mode and
//! keeps only the returned payload on the tape.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{orthonormalize, truncated_svd};
use crate::tracker::{below_norm_floor, fidelity, SiteTracker, TrackerConfig};
use crate::Mat;

use super::{ModelConfig, ModelError, SiteId};

/// What the tape stores for one site at one cycle.
#[derive(Debug, Clone)]
pub enum Payload {
    Full(Mat),
    Compressed { z: Mat, basis: Arc<Mat> },
}

impl Payload {
    /// The activation the backward pass sees: the original for full
    /// payloads, the orthogonal projection `Z Q^T` for compressed ones.
    pub fn reconstruct(&self) -> Mat {
        match self {
            Payload::Full(x) => x.clone(),
            Payload::Compressed { z, basis } => z.matmul_bt(basis),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Payload::Full(x) => x.shape(),
            Payload::Compressed { z, basis } => (z.rows(), basis.rows()),
        }
    }

    pub fn is_compressed(&self) -> bool {
        matches!(self, Payload::Compressed { .. })
    }
}

/// Per-(cycle, site) log row produced by a compressing mode.
#[derive(Debug, Clone)]
pub struct SiteLog {
    pub cycle: usize,
    pub site: SiteId,
    pub fidelity: f64,
    pub rank: usize,
    pub event: String,
}

/// Adaptive LASER compression: one tracker per eligible site, initialized
/// lazily from the first batch that reaches it (the algorithm's init step).
#[derive(Debug)]
pub struct TrackerSet {
    site_configs: BTreeMap<SiteId, TrackerConfig>,
    min_compress_dim: usize,
    seed: u64,
    trackers: BTreeMap<SiteId, SiteTracker<f64>>,
}

impl TrackerSet {
    pub fn new(
        site_configs: BTreeMap<SiteId, TrackerConfig>,
        min_compress_dim: usize,
        seed: u64,
    ) -> Self {
        TrackerSet {
            site_configs,
            min_compress_dim,
            seed,
            trackers: BTreeMap::new(),
        }
    }

    /// Uniform config over all four sites.
    pub fn uniform(config: TrackerConfig, min_compress_dim: usize, seed: u64) -> Self {
        let site_configs = SiteId::ALL.iter().map(|&s| (s, config)).collect();
        Self::new(site_configs, min_compress_dim, seed)
    }

    pub fn eligible(&self, site: SiteId, cfg: &ModelConfig) -> bool {
        site.dim(cfg) >= self.min_compress_dim && self.site_configs.contains_key(&site)
    }

    pub fn tracker(&self, site: SiteId) -> Option<&SiteTracker<f64>> {
        self.trackers.get(&site)
    }

    pub fn trackers(&self) -> &BTreeMap<SiteId, SiteTracker<f64>> {
        &self.trackers
    }

    /// Current rank per initialized site.
    pub fn ranks(&self) -> BTreeMap<SiteId, usize> {
        self.trackers.iter().map(|(&s, t)| (s, t.rank())).collect()
    }

    fn process(
        &mut self,
        site: SiteId,
        cycle: usize,
        x: Mat,
        cfg: &ModelConfig,
    ) -> Result<(Payload, Option<SiteLog>, bool), ModelError> {
        if !self.eligible(site, cfg) {
            return Ok((Payload::Full(x), None, false));
        }
        let dim = site.dim(cfg);
        // A configured rank at or above the site dimension is the identity
        // code path: projection onto a full basis stores as many elements
        // as the activation itself, so the site is kept in full and not
        // tracked. This keeps full-rank runs bit-identical to baseline.
        if self.site_configs[&site].initial_rank >= dim {
            return Ok((Payload::Full(x), None, false));
        }

        if let Some(tracker) = self.trackers.get_mut(&site) {
            let outcome = tracker.step(&x)?;
            let log = SiteLog {
                cycle,
                site,
                fidelity: outcome.fidelity,
                rank: outcome.basis.cols(),
                event: outcome.event.label(),
            };
            let skip = outcome.skip_backward;
            // A full-rank basis is an exact (lossless) code path: store the
            // activation directly so reconstruction is bit-identical.
            let payload = if outcome.basis.cols() >= dim {
                Payload::Full(x)
            } else {
                Payload::Compressed {
                    z: outcome.z,
                    basis: outcome.basis,
                }
            };
            Ok((payload, Some(log), skip))
        } else {
            // First batch at this site: initialize the basis from it, then
            // store the batch compressed with that basis.
            let config = self.site_configs[&site];
            let site_seed = self.seed ^ (site as u64).wrapping_mul(0x9e3779b97f4a7c15);
            let tracker = SiteTracker::init_site(site.as_str(), &x, config, site_seed)?;
            let z = tracker.compress(&x)?;
            let f = fidelity(&z, &x);
            let basis = Arc::clone(tracker.basis());
            let log = SiteLog {
                cycle,
                site,
                fidelity: f,
                rank: basis.cols(),
                event: "init".to_string(),
            };
            self.trackers.insert(site, tracker);
            let payload = if basis.cols() >= dim {
                Payload::Full(x)
            } else {
                Payload::Compressed { z, basis }
            };
            Ok((payload, Some(log), false))
        }
    }

    /// True if any tracker hard-reset during the last `window` events.
    pub fn event_counts(&self) -> BTreeMap<SiteId, BTreeMap<String, usize>> {
        let mut out = BTreeMap::new();
        for (&site, tracker) in &self.trackers {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for rec in tracker.events() {
                let key = rec
                    .event
                    .split(':')
                    .next()
                    .unwrap_or(&rec.event)
                    .to_string();
                *counts.entry(key).or_default() += 1;
            }
            out.insert(site, counts);
        }
        out
    }
}

/// Non-adaptive comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    /// Exact truncated SVD of every batch (upper bound on any fixed-rank
    /// projection of the same batch).
    OracleSvd,
    /// Basis frozen from the first batch seen at each site.
    StaticBasis,
    /// Fixed seeded orthonormalized Gaussian basis (data-independent).
    RandomProjection,
}

/// Fixed-rank projection compression for the baseline modes.
#[derive(Debug)]
pub struct ProjectorSet {
    kind: ProjectorKind,
    ranks: BTreeMap<SiteId, usize>,
    min_compress_dim: usize,
    seed: u64,
    bases: BTreeMap<SiteId, Arc<Mat>>,
}

impl ProjectorSet {
    pub fn new(
        kind: ProjectorKind,
        ranks: BTreeMap<SiteId, usize>,
        min_compress_dim: usize,
        seed: u64,
    ) -> Self {
        ProjectorSet {
            kind,
            ranks,
            min_compress_dim,
            seed,
            bases: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> ProjectorKind {
        self.kind
    }

    pub fn eligible(&self, site: SiteId, cfg: &ModelConfig) -> bool {
        site.dim(cfg) >= self.min_compress_dim && self.ranks.contains_key(&site)
    }

    pub fn ranks(&self) -> &BTreeMap<SiteId, usize> {
        &self.ranks
    }

    fn process(
        &mut self,
        site: SiteId,
        cycle: usize,
        x: Mat,
        cfg: &ModelConfig,
    ) -> Result<(Payload, Option<SiteLog>, bool), ModelError> {
        if !self.eligible(site, cfg) {
            return Ok((Payload::Full(x), None, false));
        }
        let dim = site.dim(cfg);
        let k = self.ranks[&site].min(dim);
        if below_norm_floor(&x) {
            let log = SiteLog {
                cycle,
                site,
                fidelity: 1.0,
                rank: k,
                event: "degenerate_batch".to_string(),
            };
            return Ok((Payload::Full(x), Some(log), false));
        }

        let basis: Arc<Mat> = match self.kind {
            ProjectorKind::OracleSvd => Arc::new(truncated_svd(&x, k.min(x.rows()))?),
            ProjectorKind::StaticBasis => {
                if let Some(b) = self.bases.get(&site) {
                    Arc::clone(b)
                } else {
                    let b = Arc::new(truncated_svd(&x, k.min(x.rows()))?);
                    self.bases.insert(site, Arc::clone(&b));
                    b
                }
            }
            ProjectorKind::RandomProjection => {
                if let Some(b) = self.bases.get(&site) {
                    Arc::clone(b)
                } else {
                    let site_seed = self.seed ^ (site as u64).wrapping_mul(0x51afd6ed558ccd65);
                    let b = Arc::new(random_orthonormal(dim, k, site_seed));
                    self.bases.insert(site, Arc::clone(&b));
                    b
                }
            }
        };

        let z = x.matmul(&basis);
        let f = fidelity(&z, &x);
        let log = SiteLog {
            cycle,
            site,
            fidelity: f,
            rank: basis.cols(),
            event: "projected".to_string(),
        };
        let payload = if basis.cols() >= dim {
            Payload::Full(x)
        } else {
            Payload::Compressed { z, basis }
        };
        Ok((payload, Some(log), false))
    }
}

/// Seeded random orthonormal basis (Gaussian entries, then orthonormalized).
pub fn random_orthonormal(dim: usize, k: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let raw = Mat::from_fn(dim, k, |_, _| normal.sample(&mut rng));
    orthonormalize(&raw).expect("Gaussian matrix is almost surely full rank")
}

/// How the forward pass treats captured activations.
pub enum CompressionMode<'a> {
    /// Store everything in full (baseline training).
    Full,
    /// Adaptive subspace tracking on eligible sites.
    Laser(&'a mut TrackerSet),
    /// Fixed-rank oracle / static / random projection on eligible sites.
    Projector(&'a mut ProjectorSet),
}

impl CompressionMode<'_> {
    pub(super) fn process(
        &mut self,
        site: SiteId,
        cycle: usize,
        x: Mat,
        cfg: &ModelConfig,
    ) -> Result<(Payload, Option<SiteLog>, bool), ModelError> {
        match self {
            CompressionMode::Full => Ok((Payload::Full(x), None, false)),
            CompressionMode::Laser(set) => set.process(site, cycle, x, cfg),
            CompressionMode::Projector(set) => set.process(site, cycle, x, cfg),
        }
    }
}

