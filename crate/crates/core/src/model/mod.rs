//! Desk-scale weight-tied recursive transformer: one block (attention plus
//! gated MLP, pre-normalized) unrolled for a configurable number of cycles,
//! with named activation-capture sites and a hand-written backward pass.
//!
//! The backward pass can evaluate its Jacobians at reconstructed
//! activations `Xhat = Z Q^T` wherever the tape holds compressed payloads;
//! gradients never flow through the compression itself.

mod block;
mod checkpoint;
mod compress;
mod params;
mod sweep;
mod train;

pub use block::{backward, forward, forward_with_cycle_params, ForwardPass, Recording};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use compress::{CompressionMode, Payload, ProjectorKind, ProjectorSet, SiteLog, TrackerSet};
pub use params::Params;
pub use sweep::{
    estimate_jacobian_lipschitz, gradient_cosine_check, oracle_rank_sweep, CosineCheck, SweepRow,
};
pub use train::{
    clip_gradients, evaluate, softmax_cross_entropy, train_step, AdamW, Batch, EvalMetrics,
    StepStats, TrainHyper,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::tracker::TrackerError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tape does not match this forward: {0}")]
    TapeMismatch(String),
    #[error("non-finite loss ({loss})")]
    NonFiniteLoss { loss: f64 },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture of the weight-tied block and its unrolling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    /// Gated-MLP inner width; the gate/up concatenation site is twice this.
    pub mlp_inner: usize,
    /// Recursive cycles the shared block is unrolled for.
    pub cycles: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return Err("head_dim must be even for rotary position encoding".into());
        }
        if self.mlp_inner != 3 * self.hidden_dim {
            return Err(format!(
                "mlp_inner {} must equal 3 * hidden_dim = {}",
                self.mlp_inner,
                3 * self.hidden_dim
            ));
        }
        if self.vocab_size != 5 {
            return Err("vocab_size is fixed at 5 (wall/passage/start/goal/path)".into());
        }
        if self.cycles == 0 || self.seq_len == 0 {
            return Err("cycles and seq_len must be >= 1".into());
        }
        if !(self.rope_theta > 1.0) {
            return Err("rope_theta must be > 1".into());
        }
        Ok(())
    }

    /// Desk-scale defaults: 7x7 mazes, 8 cycles.
    pub fn desk_default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            num_heads: 4,
            mlp_inner: 192,
            cycles: 8,
            seq_len: 49,
            vocab_size: 5,
            rope_theta: 10000.0,
        }
    }

    /// Full-scale shape (constructible for shape tests only; training at
    /// this size is out of scope).
    pub fn paper_shaped() -> Self {
        ModelConfig {
            hidden_dim: 512,
            num_heads: 8,
            mlp_inner: 1536,
            cycles: 24,
            seq_len: 121,
            vocab_size: 5,
            rope_theta: 10000.0,
        }
    }

    /// Minimal config for gradient checking.
    pub fn tiny(cycles: usize, seq_len: usize) -> Self {
        ModelConfig {
            hidden_dim: 8,
            num_heads: 2,
            mlp_inner: 24,
            cycles,
            seq_len,
            vocab_size: 5,
            rope_theta: 10000.0,
        }
    }
}

/// Named activation-capture sites inside the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SiteId {
    /// Attention output after the output projection (hidden_dim wide).
    AttnOut,
    /// Concatenated gate/up projections (2 * mlp_inner wide).
    MlpConcat,
    /// Gated activation silu(g) * u (mlp_inner wide).
    MlpInnerOut,
    /// MLP output after the down projection (hidden_dim wide).
    MlpOut,
}

impl SiteId {
    pub const ALL: [SiteId; 4] = [
        SiteId::AttnOut,
        SiteId::MlpConcat,
        SiteId::MlpInnerOut,
        SiteId::MlpOut,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SiteId::AttnOut => "attn_out",
            SiteId::MlpConcat => "mlp_concat",
            SiteId::MlpInnerOut => "mlp_inner_out",
            SiteId::MlpOut => "mlp_out",
        }
    }

    pub fn dim(&self, cfg: &ModelConfig) -> usize {
        match self {
            SiteId::AttnOut | SiteId::MlpOut => cfg.hidden_dim,
            SiteId::MlpConcat => 2 * cfg.mlp_inner,
            SiteId::MlpInnerOut => cfg.mlp_inner,
        }
    }

    /// Dimension-tagged label in the style of the per-site summary tables
    /// (e.g. `mlp_384`, `attn_64`).
    pub fn table_label(&self, cfg: &ModelConfig) -> String {
        match self {
            SiteId::AttnOut => format!("attn_{}", cfg.hidden_dim),
            SiteId::MlpConcat => format!("mlp_{}", 2 * cfg.mlp_inner),
            SiteId::MlpInnerOut => format!("mlp_{}", cfg.mlp_inner),
            SiteId::MlpOut => format!("mlp_{}", cfg.hidden_dim),
        }
    }
}

impl std::str::FromStr for SiteId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SiteId::ALL
            .iter()
            .copied()
            .find(|site| site.as_str() == s)
            .ok_or_else(|| format!("unknown site id {s:?}"))
    }
}
