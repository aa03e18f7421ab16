//! Loss, optimizer, and the per-batch training step.

use rayon::prelude::*;

use crate::maze::{MazeInstance, MazeToken};
use crate::Mat;

use super::block::{backward, forward};
use super::compress::{CompressionMode, SiteLog};
use super::params::Params;
use super::{ModelConfig, ModelError};

/// A tokenized batch: `n_seqs` sequences stacked into flat token/target
/// buffers of length `n_seqs * seq_len`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens: Vec<u8>,
    pub targets: Vec<u8>,
    pub n_seqs: usize,
}

impl Batch {
    pub fn from_instances(instances: &[MazeInstance]) -> Batch {
        let mut tokens = Vec::new();
        let mut targets = Vec::new();
        for m in instances {
            tokens.extend_from_slice(&m.input_tokens);
            targets.extend_from_slice(&m.target_tokens);
        }
        Batch {
            tokens,
            targets,
            n_seqs: instances.len(),
        }
    }
}

/// Mean cross-entropy over all cells plus its gradient with respect to the
/// logits, and the count of correctly predicted path cells.
pub fn softmax_cross_entropy(logits: &Mat, targets: &[u8]) -> (f64, Mat) {
    let n = logits.rows();
    assert_eq!(targets.len(), n);
    let inv_n = 1.0 / n as f64;
    let mut d_logits = Mat::zeros(n, logits.cols());
    let mut loss = 0.0;
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let d_row = d_logits.row_mut(r);
        for (dv, &l) in d_row.iter_mut().zip(row) {
            *dv = (l - max).exp();
            sum += *dv;
        }
        let target = targets[r] as usize;
        loss -= (d_row[target] / sum).ln() * inv_n;
        for dv in d_row.iter_mut() {
            *dv *= inv_n / sum;
        }
        d_row[target] -= inv_n;
    }
    (loss, d_logits)
}

/// Deterministic argmax (first maximal index) per row.
pub fn argmax_rows(logits: &Mat) -> Vec<u8> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

/// Fraction of path cells (target == Path) predicted correctly, over a
/// stream of (prediction, target) pairs. Returns 1.0 when the stream has
/// no path cells.
pub fn path_token_accuracy(predictions: &[u8], targets: &[u8]) -> f64 {
    let path = MazeToken::Path as u8;
    let mut total = 0usize;
    let mut correct = 0usize;
    for (&p, &t) in predictions.iter().zip(targets) {
        if t == path {
            total += 1;
            if p == t {
                correct += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}

/// Global-norm gradient clipping; returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale_all(max_norm / norm);
    }
    norm
}

/// AdamW with decoupled weight decay.
pub struct AdamW {
    m: Params,
    v: Params,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(cfg: &ModelConfig, weight_decay: f64) -> AdamW {
        AdamW {
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
            t: 0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .named_mut()
            .into_iter()
            .zip(grads.named())
            .zip(self.m.named_mut().into_iter().zip(self.v.named_mut()))
        {
            for i in 0..p.data().len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                let pv = p.data()[i];
                p.data_mut()[i] = pv - lr * (update + self.weight_decay * pv);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainHyper {
    pub lr: f64,
    pub grad_clip: f64,
}

#[derive(Debug)]
pub struct StepStats {
    pub loss: f64,
    pub token_acc: f64,
    /// True iff a hard reset occurred and the gradient was discarded.
    pub skipped: bool,
    pub grad_norm: f64,
    pub site_logs: Vec<SiteLog>,
}

/// One training step: forward (with the given compression mode), loss,
/// backward at the tape's reconstructions, clip, AdamW update. A batch in
/// which any site hard-reset is consumed without an update.
pub fn train_step(
    params: &mut Params,
    opt: &mut AdamW,
    cfg: &ModelConfig,
    batch: &Batch,
    mode: &mut CompressionMode,
    hyper: TrainHyper,
) -> Result<StepStats, ModelError> {
    let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, mode)?;
    let (loss, d_logits) = softmax_cross_entropy(&pass.logits, &batch.targets);
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { loss });
    }
    let predictions = argmax_rows(&pass.logits);
    let token_acc = path_token_accuracy(&predictions, &batch.targets);

    if pass.skip_backward {
        return Ok(StepStats {
            loss,
            token_acc,
            skipped: true,
            grad_norm: 0.0,
            site_logs: pass.site_logs,
        });
    }

    let mut grads = backward(params, cfg, &pass.recording, &d_logits)?;
    let grad_norm = clip_gradients(&mut grads, hyper.grad_clip);
    opt.step(params, &grads, hyper.lr);

    Ok(StepStats {
        loss,
        token_acc,
        skipped: false,
        grad_norm,
        site_logs: pass.site_logs,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EvalMetrics {
    /// Percentage of path cells predicted correctly.
    pub token_acc_pct: f64,
    /// Percentage of mazes whose predicted grid matches the target exactly.
    pub solve_rate_pct: f64,
}

/// Evaluate on a dataset; forward passes run in full (uncompressed) mode
/// and in parallel over batches.
pub fn evaluate(
    params: &Params,
    cfg: &ModelConfig,
    instances: &[MazeInstance],
    batch_size: usize,
) -> EvalMetrics {
    assert!(!instances.is_empty(), "validation set must be nonempty");
    let chunks: Vec<&[MazeInstance]> = instances.chunks(batch_size.max(1)).collect();
    let partials: Vec<(usize, usize, usize, usize)> = chunks
        .par_iter()
        .map(|chunk| {
            let batch = Batch::from_instances(chunk);
            let mut mode = CompressionMode::Full;
            let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, &mut mode)
                .expect("validated config and tokens");
            let predictions = argmax_rows(&pass.logits);
            let path = MazeToken::Path as u8;
            let mut path_total = 0usize;
            let mut path_correct = 0usize;
            let mut solved = 0usize;
            for (s, m) in chunk.iter().enumerate() {
                let l = m.seq_len();
                let pred = &predictions[s * l..(s + 1) * l];
                let tgt = &batch.targets[s * l..(s + 1) * l];
                if pred == tgt {
                    solved += 1;
                }
                for (&p, &t) in pred.iter().zip(tgt) {
                    if t == path {
                        path_total += 1;
                        if p == t {
                            path_correct += 1;
                        }
                    }
                }
            }
            (path_correct, path_total, solved, chunk.len())
        })
        .collect();

    let mut correct = 0usize;
    let mut total = 0usize;
    let mut solved = 0usize;
    let mut count = 0usize;
    for (c, t, s, n) in partials {
        correct += c;
        total += t;
        solved += s;
        count += n;
    }
    EvalMetrics {
        token_acc_pct: if total == 0 {
            100.0
        } else {
            100.0 * correct as f64 / total as f64
        },
        solve_rate_pct: 100.0 * solved as f64 / count as f64,
    }
}
