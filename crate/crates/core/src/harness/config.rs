//! Run configuration: TOML sections for the model, the tracker, and the
//! run itself. The loaded config is echoed into the output directory for
//! provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, SiteId};
use crate::tracker::TrackerConfig;

use super::HarnessError;

/// Training/compression mode of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Laser,
    OracleSvd,
    StaticBasis,
    RandomProjection,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::Laser => "laser",
            RunMode::OracleSvd => "oracle_svd",
            RunMode::StaticBasis => "static_basis",
            RunMode::RandomProjection => "random_projection",
        }
    }

    /// True for modes that compress eligible sites.
    pub fn compresses(&self) -> bool {
        !matches!(self, RunMode::Baseline)
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(RunMode::Baseline),
            "laser" => Ok(RunMode::Laser),
            "oracle_svd" | "oracle" => Ok(RunMode::OracleSvd),
            "static_basis" | "static" => Ok(RunMode::StaticBasis),
            "random_projection" | "random" => Ok(RunMode::RandomProjection),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Per-site overrides of the tracker defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteOverride {
    pub initial_rank: Option<usize>,
    pub initial_rank_fraction: Option<f64>,
    pub max_rank: Option<usize>,
    pub fidelity_threshold: Option<f64>,
    pub patience: Option<usize>,
    pub expansion_size: Option<usize>,
    pub power_steps: Option<usize>,
}

/// Tracker configuration per site class. An explicit `initial_rank_fraction`
/// (rank as a fraction of the site dimension) takes precedence over the
/// absolute `initial_rank`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackerSettings {
    pub initial_rank: Option<usize>,
    pub initial_rank_fraction: Option<f64>,
    pub fidelity_threshold: f64,
    pub patience: usize,
    pub expansion_size: usize,
    pub max_rank: usize,
    pub power_steps: usize,
    /// Sites narrower than this store full activations (compression there
    /// is pure overhead).
    pub min_compress_dim: usize,
    #[serde(default)]
    pub site: BTreeMap<String, SiteOverride>,
}

impl Default for TrackerSettings {
    fn default() -> Self {
        TrackerSettings {
            initial_rank: Some(128),
            initial_rank_fraction: None,
            fidelity_threshold: 0.95,
            patience: 2,
            expansion_size: 4,
            max_rank: 512,
            power_steps: 1,
            min_compress_dim: 256,
            site: BTreeMap::new(),
        }
    }
}

impl TrackerSettings {
    /// Resolved initial rank for a site of the given dimension.
    pub fn rank_for(&self, site: SiteId, dim: usize) -> usize {
        let over = self.site.get(site.as_str());
        let fraction = over
            .and_then(|o| o.initial_rank_fraction)
            .or(self.initial_rank_fraction);
        let absolute = over.and_then(|o| o.initial_rank).or(self.initial_rank);
        let raw = match (fraction, absolute) {
            (Some(f), _) => (dim as f64 * f).round() as usize,
            (None, Some(k)) => k,
            (None, None) => 128,
        };
        raw.clamp(1, dim)
    }

    /// Full tracker config for a site of the given dimension.
    pub fn config_for(&self, site: SiteId, dim: usize) -> TrackerConfig {
        let over = self.site.get(site.as_str());
        let initial_rank = self.rank_for(site, dim);
        let max_rank = over
            .and_then(|o| o.max_rank)
            .unwrap_or(self.max_rank)
            .max(initial_rank);
        TrackerConfig {
            initial_rank,
            fidelity_threshold: over
                .and_then(|o| o.fidelity_threshold)
                .unwrap_or(self.fidelity_threshold),
            patience: over.and_then(|o| o.patience).unwrap_or(self.patience),
            expansion_size: over
                .and_then(|o| o.expansion_size)
                .unwrap_or(self.expansion_size),
            max_rank,
            power_steps: over.and_then(|o| o.power_steps).unwrap_or(self.power_steps),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub mode: RunMode,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_min: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    pub dataset: PathBuf,
    pub val_count: usize,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_true")]
    pub checkpoint_epochs: bool,
    #[serde(default = "default_bytes_per_element")]
    pub bytes_per_element: usize,
}

fn default_warmup() -> usize {
    10
}

fn default_weight_decay() -> f64 {
    1e-2
}

fn default_grad_clip() -> f64 {
    1.0
}

fn default_split_seed() -> u64 {
    7
}

fn default_true() -> bool {
    true
}

fn default_bytes_per_element() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub tracker: TrackerSettings,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model
            .validate()
            .map_err(HarnessError::Config)?;
        if self.run.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be nonempty".into()));
        }
        if self.run.epochs == 0 || self.run.batch_size == 0 {
            return Err(HarnessError::Config(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if self.run.val_count == 0 {
            return Err(HarnessError::Config("val_count must be >= 1".into()));
        }
        for name in self.tracker.site.keys() {
            name.parse::<SiteId>()
                .map_err(HarnessError::Config)?;
        }
        if self.run.mode.compresses() {
            for site in SiteId::ALL {
                let dim = site.dim(&self.model);
                if dim >= self.tracker.min_compress_dim {
                    self.tracker
                        .config_for(site, dim)
                        .validate()
                        .map_err(HarnessError::Config)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(raw: &str) -> Result<RunConfig, HarnessError> {
        let cfg: RunConfig =
            toml::from_str(raw).map_err(|e| HarnessError::Config(format!("TOML: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let raw = std::fs::read_to_string(path)?;
        Self::from_toml_str(&raw)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
