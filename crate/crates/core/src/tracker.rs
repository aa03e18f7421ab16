//! Per-site subspace tracking: the compress / fidelity / power-update /
//! expand / hard-reset state machine.
//!
//! Each compression site owns one tracker. A call to [`SiteTracker::step`]
//! consumes one activation batch: the batch is compressed with the basis
//! held *before* the step, the fidelity `F = |Z|_F / |X|_F` decides between
//! a power-iteration refresh (F >= threshold) and the fallback ladder
//! (expansion, then hard reset once the failure counter reaches patience).
//! The returned coefficients always correspond to the pre-update basis, so
//! the reconstruction `Z Q^T` is a true orthogonal projection; the updated
//! basis takes effect from the next batch.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{orthonormalize, truncated_svd, LinalgError, Matrix, DEFAULT_DROP_TOL};
use crate::Scalar;

/// Relative floor on the per-element Frobenius norm below which a batch is
/// treated as zero: fidelity is defined as 1 and the basis is left alone.
const NORM_FLOOR_PER_ELEMENT: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("initialization batch is degenerate; disable compression at this site")]
    DegenerateInit,
    #[error("batch has {got} columns, tracker expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Configuration for one tracked site.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
pub struct TrackerConfig {
    /// Initial (and post-reset) rank k0.
    pub initial_rank: usize,
    /// Fidelity threshold in (0, 1].
    pub fidelity_threshold: f64,
    /// Consecutive low-fidelity batches tolerated before a hard reset.
    pub patience: usize,
    /// Rows sampled per subspace expansion.
    pub expansion_size: usize,
    /// Rank never grows beyond this.
    pub max_rank: usize,
    /// Power-iteration refinements per accepted batch.
    pub power_steps: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            initial_rank: 128,
            fidelity_threshold: 0.95,
            patience: 2,
            expansion_size: 4,
            max_rank: 512,
            power_steps: 1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_rank == 0 || self.initial_rank > self.max_rank {
            return Err(format!(
                "initial_rank {} must be in [1, max_rank={}]",
                self.initial_rank, self.max_rank
            ));
        }
        if !(self.fidelity_threshold > 0.0 && self.fidelity_threshold <= 1.0) {
            return Err(format!(
                "fidelity_threshold {} must lie in (0, 1]",
                self.fidelity_threshold
            ));
        }
        if self.patience == 0 || self.expansion_size == 0 || self.power_steps == 0 {
            return Err("patience, expansion_size and power_steps must be >= 1".into());
        }
        Ok(())
    }
}

/// What a step did to the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrackerEvent {
    /// Basis refreshed by power iteration (fidelity passed).
    PowerUpdated,
    /// Failure counter incremented and residual rows appended.
    Expanded { from_rank: usize, to_rank: usize },
    /// Patience exhausted: exact SVD realignment; skip this batch's backward.
    HardReset,
}

impl TrackerEvent {
    pub fn label(&self) -> String {
        match self {
            TrackerEvent::PowerUpdated => "power_updated".to_string(),
            TrackerEvent::Expanded { from_rank, to_rank } => {
                format!("expanded:{from_rank}->{to_rank}")
            }
            TrackerEvent::HardReset => "hard_reset".to_string(),
        }
    }
}

/// One line of the per-site event log, serializable to JSON lines.
///
/// For `Expanded` and `HardReset` records the fidelity is recomputed with
/// the post-event basis (the value the new span achieves on the triggering
/// batch); for `PowerUpdated` it is the step's own fidelity.
#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub step: usize,
    pub site: String,
    pub fidelity: f64,
    pub rank: usize,
    pub event: String,
}

/// Result of one tracker step.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    /// Compressed coefficients, computed with the pre-update basis.
    pub z: Matrix<T>,
    /// Fidelity of the pre-update basis on this batch, in [0, 1 + eps].
    pub fidelity: T,
    pub event: TrackerEvent,
    /// True iff the event was a hard reset: the caller must discard this
    /// batch's gradient contribution.
    pub skip_backward: bool,
    /// The basis that produced `z` (pre-update); reconstruction for the
    /// backward pass must use exactly this basis.
    pub basis: Arc<Matrix<T>>,
}

/// LASER state for one compression site.
#[derive(Debug, Clone)]
pub struct SiteTracker<T> {
    site_id: String,
    basis: Arc<Matrix<T>>,
    fail_count: usize,
    step_index: usize,
    config: TrackerConfig,
    rng: ChaCha8Rng,
    events: Vec<EventRecord>,
}

impl<T: Scalar> SiteTracker<T> {
    /// Initialize from the first batch: basis = top-k0 right singular
    /// vectors of `x0`. If k0 exceeds `min(rows, cols)` it is clamped and a
    /// warning event is recorded.
    pub fn init_site(
        site_id: &str,
        x0: &Matrix<T>,
        config: TrackerConfig,
        seed: u64,
    ) -> Result<Self, TrackerError> {
        config.validate().expect("invalid tracker config");
        if below_norm_floor(x0) {
            return Err(TrackerError::DegenerateInit);
        }
        let feasible = x0.rows().min(x0.cols());
        let k0 = config.initial_rank.min(feasible);
        let basis = truncated_svd(x0, k0).map_err(|e| match e {
            LinalgError::AllColumnsDegenerate => TrackerError::DegenerateInit,
            other => TrackerError::Linalg(other),
        })?;

        let mut tracker = SiteTracker {
            site_id: site_id.to_string(),
            basis: Arc::new(basis),
            fail_count: 0,
            step_index: 0,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
        };
        let f0 = fidelity(&tracker.compress(x0)?, x0);
        let label = if k0 < config.initial_rank {
            "init_rank_clamped"
        } else {
            "init"
        };
        tracker.record(f0.to_f64(), label);
        Ok(tracker)
    }

    /// Start from an explicit orthonormal basis (used by convergence
    /// studies that track from a random initialization).
    pub fn with_basis(
        site_id: &str,
        basis: Matrix<T>,
        config: TrackerConfig,
        seed: u64,
    ) -> Result<Self, TrackerError> {
        config.validate().expect("invalid tracker config");
        let defect = basis.orthonormality_defect().to_f64();
        if defect > 1e-6 {
            return Err(TrackerError::Linalg(LinalgError::NotOrthonormal {
                which: "basis",
                deviation: defect,
            }));
        }
        Ok(SiteTracker {
            site_id: site_id.to_string(),
            basis: Arc::new(basis),
            fail_count: 0,
            step_index: 0,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
        })
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn fail_count(&self) -> usize {
        self.fail_count
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn basis(&self) -> &Arc<Matrix<T>> {
        &self.basis
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.events {
            out.push_str(&serde_json::to_string(rec).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// `Z = X Q` with the currently held basis.
    pub fn compress(&self, x: &Matrix<T>) -> Result<Matrix<T>, TrackerError> {
        self.check_dim(x)?;
        Ok(x.matmul(&self.basis))
    }

    /// One full tracker step over a batch.
    pub fn step(&mut self, x: &Matrix<T>) -> Result<StepOutcome<T>, TrackerError> {
        self.check_dim(x)?;
        let compression_basis = Arc::clone(&self.basis);

        // Zero batches carry no subspace information: report perfect
        // fidelity and leave the state untouched.
        if below_norm_floor(x) {
            let z = x.matmul(&compression_basis);
            self.record(1.0, "power_updated");
            self.step_index += 1;
            return Ok(StepOutcome {
                z,
                fidelity: T::one(),
                event: TrackerEvent::PowerUpdated,
                skip_backward: false,
                basis: compression_basis,
            });
        }

        let z = x.matmul(&compression_basis);
        let f = fidelity(&z, x);

        let event = if f.to_f64() >= self.config.fidelity_threshold {
            self.power_update(x)?;
            self.record(f.to_f64(), "power_updated");
            TrackerEvent::PowerUpdated
        } else {
            self.fail_count += 1;
            if self.fail_count >= self.config.patience {
                self.hard_reset(x)?;
                let post = fidelity(&self.compress(x)?, x);
                self.record(post.to_f64(), "hard_reset");
                TrackerEvent::HardReset
            } else {
                let (from_rank, to_rank) = self.expand(x)?;
                let post = fidelity(&self.compress(x)?, x);
                self.record(post.to_f64(), &format!("expanded:{from_rank}->{to_rank}"));
                TrackerEvent::Expanded { from_rank, to_rank }
            }
        };

        self.step_index += 1;
        let skip_backward = event == TrackerEvent::HardReset;
        Ok(StepOutcome {
            z,
            fidelity: f,
            event,
            skip_backward,
            basis: compression_basis,
        })
    }

    /// Matrix-free power iteration: `Q <- Orth(X^T (X Q))`, repeated
    /// `power_steps` times. Resets the failure counter.
    pub fn power_update(&mut self, x: &Matrix<T>) -> Result<(), TrackerError> {
        self.check_dim(x)?;
        let mut q = (*self.basis).clone();
        for _ in 0..self.config.power_steps {
            let z = x.matmul(&q);
            let m = x.tr_matmul(&z);
            q = orthonormalize(&m)?;
        }
        self.basis = Arc::new(q);
        self.fail_count = 0;
        Ok(())
    }

    /// Sample up to `expansion_size` rows of `x` (uniform, without
    /// replacement), orthogonalize them against the basis and append the
    /// non-degenerate residual directions, clamped at `max_rank` by keeping
    /// the largest-residual directions. Returns (old_rank, new_rank).
    pub fn expand(&mut self, x: &Matrix<T>) -> Result<(usize, usize), TrackerError> {
        self.check_dim(x)?;
        let from_rank = self.rank();
        let budget = self.config.max_rank.saturating_sub(from_rank);
        if budget == 0 {
            return Ok((from_rank, from_rank));
        }

        let rows = self.sample_rows(x.rows());
        // Residuals r = x_i - Q Q^T x_i for each sampled row.
        let mut residuals: Vec<(T, Vec<T>)> = Vec::with_capacity(rows.len());
        for &r in &rows {
            let row = x.row(r).to_vec();
            let coeffs = self.basis.tr_vecmul(&row); // Q^T x
            let mut res = row;
            for (j, e) in res.iter_mut().enumerate() {
                let mut proj = T::zero();
                for (c, &coef) in coeffs.iter().enumerate() {
                    proj = proj + self.basis[(j, c)] * coef;
                }
                *e = *e - proj;
            }
            let norm = res.iter().map(|&v| v * v).sum::<T>().sqrt();
            residuals.push((norm, res));
        }

        // Largest residuals first; excess beyond the rank budget is dropped.
        residuals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        residuals.truncate(budget);
        let drop_threshold = T::from_f64(DEFAULT_DROP_TOL) * x.max_col_scale();
        let kept: Vec<Vec<T>> = residuals
            .into_iter()
            .filter(|(norm, _)| *norm > drop_threshold)
            .map(|(_, res)| res)
            .collect();
        if kept.is_empty() {
            return Ok((from_rank, from_rank)); // legal no-op expansion
        }

        let appended = Matrix::from_columns(&kept);
        let stacked = self.basis.hstack(&appended);
        let q = orthonormalize(&stacked)?;
        let to_rank = q.cols();
        self.basis = Arc::new(q);
        Ok((from_rank, to_rank))
    }

    /// Exact realignment: `Q <- top-k0 SVD(X)`, counter cleared. The caller
    /// must not backpropagate over this batch.
    pub fn hard_reset(&mut self, x: &Matrix<T>) -> Result<(), TrackerError> {
        self.check_dim(x)?;
        if below_norm_floor(x) {
            return Err(TrackerError::DegenerateInit);
        }
        let k0 = self
            .config
            .initial_rank
            .min(x.rows().min(x.cols()))
            .max(1);
        let basis = truncated_svd(x, k0).map_err(|e| match e {
            LinalgError::AllColumnsDegenerate => TrackerError::DegenerateInit,
            other => TrackerError::Linalg(other),
        })?;
        self.basis = Arc::new(basis);
        self.fail_count = 0;
        Ok(())
    }

    fn sample_rows(&mut self, n_rows: usize) -> Vec<usize> {
        let m = self.config.expansion_size.min(n_rows);
        // Partial Fisher-Yates over the row indices.
        let mut indices: Vec<usize> = (0..n_rows).collect();
        for i in 0..m {
            let j = self.rng.gen_range(i..n_rows);
            indices.swap(i, j);
        }
        indices.truncate(m);
        indices
    }

    fn check_dim(&self, x: &Matrix<T>) -> Result<(), TrackerError> {
        if x.cols() != self.dim() {
            return Err(TrackerError::DimensionMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn record(&mut self, fidelity: f64, event: &str) {
        self.events.push(EventRecord {
            step: self.step_index,
            site: self.site_id.clone(),
            fidelity,
            rank: self.rank(),
            event: event.to_string(),
        });
    }
}

/// Fidelity `F = |Z|_F / |X|_F`; equals the cosine similarity between `X`
/// and its reconstruction `Z Q^T` when the basis is orthonormal. Defined as
/// 1 for batches below the norm floor.
pub fn fidelity<T: Scalar>(z: &Matrix<T>, x: &Matrix<T>) -> T {
    if below_norm_floor(x) {
        return T::one();
    }
    z.frobenius_norm() / x.frobenius_norm()
}

/// Reconstruction `Z Q^T`; the orthogonal projection of the original batch
/// when `Z = X Q` with the same orthonormal `Q`.
pub fn reconstruct<T: Scalar>(z: &Matrix<T>, q: &Matrix<T>) -> Matrix<T> {
    assert_eq!(
        z.cols(),
        q.cols(),
        "coefficients and basis disagree on rank"
    );
    z.matmul_bt(q)
}

pub(crate) fn below_norm_floor<T: Scalar>(x: &Matrix<T>) -> bool {
    let floor = T::from_f64(NORM_FLOOR_PER_ELEMENT * (x.rows() * x.cols()) as f64);
    x.frobenius_norm() < floor
}

impl<T: Scalar> Matrix<T> {
    /// Largest column norm, used as the reference scale for residual
    /// degeneracy checks.
    fn max_col_scale(&self) -> T {
        let mut sums = vec![T::zero(); self.cols()];
        for i in 0..self.rows() {
            for (s, &v) in sums.iter_mut().zip(self.row(i)) {
                *s = *s + v * v;
            }
        }
        sums.into_iter().fold(T::zero(), T::max).sqrt()
    }
}
