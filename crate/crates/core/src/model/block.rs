//! Forward and reverse passes of the unrolled weight-tied block.
//!
//! The forward pass always computes with exact activations; compression
//! only decides what is *stored* for the backward pass. The backward pass
//! first re-materializes the residual stream from the stored (possibly
//! compressed) branch outputs and then evaluates every Jacobian at those
//! reconstructed points, so compressed training differs from full training
//! only through the evaluation points, never through extra gradient paths.

use crate::Mat;

use super::compress::{CompressionMode, Payload, SiteLog};
use super::params::Params;
use super::{ModelConfig, ModelError, SiteId};

const RMS_EPS: f64 = 1e-6;

/// Everything the backward pass needs from one cycle.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    // Cached in full: these are not compression targets.
    q_rope: Mat,
    k_rope: Mat,
    v: Mat,
    /// Attention probabilities per (sequence, head), each seq_len x seq_len.
    probs: Vec<Mat>,
    ctx: Mat,
    // The four capture sites.
    pub attn_out: Payload,
    pub mlp_concat: Payload,
    pub mlp_inner_out: Payload,
    pub mlp_out: Payload,
}

impl CycleRecord {
    pub fn payload(&self, site: SiteId) -> &Payload {
        match site {
            SiteId::AttnOut => &self.attn_out,
            SiteId::MlpConcat => &self.mlp_concat,
            SiteId::MlpInnerOut => &self.mlp_inner_out,
            SiteId::MlpOut => &self.mlp_out,
        }
    }

    pub fn payload_mut(&mut self, site: SiteId) -> &mut Payload {
        match site {
            SiteId::AttnOut => &mut self.attn_out,
            SiteId::MlpConcat => &mut self.mlp_concat,
            SiteId::MlpInnerOut => &mut self.mlp_inner_out,
            SiteId::MlpOut => &mut self.mlp_out,
        }
    }
}

/// The tape of one forward pass.
#[derive(Debug, Clone)]
pub struct Recording {
    pub tokens: Vec<u8>,
    pub n_seqs: usize,
    pub x0: Mat,
    pub cycles: Vec<CycleRecord>,
}

impl Recording {
    /// Number of tape entries held per site (one per cycle).
    pub fn entries_per_site(&self) -> usize {
        self.cycles.len()
    }
}

/// Output of a forward pass.
pub struct ForwardPass {
    pub logits: Mat,
    pub recording: Recording,
    pub site_logs: Vec<SiteLog>,
    /// True iff any tracker hard-reset during this batch; the caller must
    /// discard the batch's gradient contribution.
    pub skip_backward: bool,
}

/// Weight-tied forward: every cycle uses the same parameters.
pub fn forward(
    params: &Params,
    cfg: &ModelConfig,
    tokens: &[u8],
    n_seqs: usize,
    mode: &mut CompressionMode,
) -> Result<ForwardPass, ModelError> {
    let tied: Vec<&Params> = (0..cfg.cycles).map(|_| params).collect();
    forward_with_cycle_params(&tied, cfg, tokens, n_seqs, mode)
}

/// Forward with explicit per-cycle parameters. Training always ties them;
/// the untied form exists so finite-difference checks can probe each
/// cycle's contribution separately.
pub fn forward_with_cycle_params(
    cycle_params: &[&Params],
    cfg: &ModelConfig,
    tokens: &[u8],
    n_seqs: usize,
    mode: &mut CompressionMode,
) -> Result<ForwardPass, ModelError> {
    if cycle_params.len() != cfg.cycles {
        return Err(ModelError::ShapeMismatch(format!(
            "{} parameter sets for {} cycles",
            cycle_params.len(),
            cfg.cycles
        )));
    }
    if tokens.len() != n_seqs * cfg.seq_len {
        return Err(ModelError::ShapeMismatch(format!(
            "{} tokens for {} sequences of length {}",
            tokens.len(),
            n_seqs,
            cfg.seq_len
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(ModelError::ShapeMismatch(format!(
            "token {t} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }

    let n_rows = tokens.len();
    let d = cfg.hidden_dim;

    // Embedding lookup.
    let mut x0 = Mat::zeros(n_rows, d);
    for (r, &t) in tokens.iter().enumerate() {
        x0.row_mut(r)
            .copy_from_slice(cycle_params[0].embed.row(t as usize));
    }

    let mut x = x0.clone();
    let mut cycles = Vec::with_capacity(cfg.cycles);
    let mut site_logs = Vec::new();
    let mut skip_backward = false;

    for (cycle, p) in cycle_params.iter().enumerate() {
        // Attention sublayer.
        let a_in = rmsnorm_fwd(&x, &p.g_attn);
        let mut q = a_in.matmul(&p.wq);
        let mut k = a_in.matmul(&p.wk);
        let v = a_in.matmul(&p.wv);
        rope_apply(&mut q, cfg, false);
        rope_apply(&mut k, cfg, false);

        let (ctx, probs) = attention(&q, &k, &v, cfg, n_seqs);
        let attn_out = ctx.matmul(&p.wo);

        x = x.add(&attn_out);
        let (attn_payload, log, skip) = mode.process(SiteId::AttnOut, cycle, attn_out, cfg)?;
        site_logs.extend(log);
        skip_backward |= skip;

        // Gated MLP sublayer.
        let m_in = rmsnorm_fwd(&x, &p.g_mlp);
        let gate = m_in.matmul(&p.w_gate);
        let up = m_in.matmul(&p.w_up);
        let concat = gate.hstack(&up);
        let (concat_payload, log, skip) = mode.process(SiteId::MlpConcat, cycle, concat, cfg)?;
        site_logs.extend(log);
        skip_backward |= skip;

        let mut h = gate.clone();
        for (hv, &uv) in h.data_mut().iter_mut().zip(up.data()) {
            *hv = silu(*hv) * uv;
        }
        let (h_payload, log, skip) = mode.process(SiteId::MlpInnerOut, cycle, h.clone(), cfg)?;
        site_logs.extend(log);
        skip_backward |= skip;

        let mlp_out = h.matmul(&p.w_down);
        x = x.add(&mlp_out);
        let (mlp_payload, log, skip) = mode.process(SiteId::MlpOut, cycle, mlp_out, cfg)?;
        site_logs.extend(log);
        skip_backward |= skip;

        cycles.push(CycleRecord {
            q_rope: q,
            k_rope: k,
            v,
            probs,
            ctx,
            attn_out: attn_payload,
            mlp_concat: concat_payload,
            mlp_inner_out: h_payload,
            mlp_out: mlp_payload,
        });
    }

    let last = cycle_params[cfg.cycles - 1];
    let f_in = rmsnorm_fwd(&x, &last.g_final);
    let logits = f_in.matmul(&last.head);

    Ok(ForwardPass {
        logits,
        recording: Recording {
            tokens: tokens.to_vec(),
            n_seqs,
            x0,
            cycles,
        },
        site_logs,
        skip_backward,
    })
}

/// Reverse pass with weight-tied accumulation; Jacobians are evaluated at
/// the reconstructions held on the tape.
pub fn backward(
    params: &Params,
    cfg: &ModelConfig,
    rec: &Recording,
    d_logits: &Mat,
) -> Result<Params, ModelError> {
    let n_rows = rec.tokens.len();
    let d = cfg.hidden_dim;
    let inner = cfg.mlp_inner;
    if rec.cycles.len() != cfg.cycles {
        return Err(ModelError::TapeMismatch(format!(
            "{} recorded cycles, config says {}",
            rec.cycles.len(),
            cfg.cycles
        )));
    }
    if rec.x0.shape() != (n_rows, d) || d_logits.shape() != (n_rows, cfg.vocab_size) {
        return Err(ModelError::TapeMismatch(
            "stream or upstream-gradient shape does not match the tape".into(),
        ));
    }
    for (c, record) in rec.cycles.iter().enumerate() {
        for site in SiteId::ALL {
            let expect = (n_rows, site.dim(cfg));
            if record.payload(site).shape() != expect {
                return Err(ModelError::TapeMismatch(format!(
                    "cycle {c} site {} has shape {:?}, expected {:?}",
                    site.as_str(),
                    record.payload(site).shape(),
                    expect
                )));
            }
        }
    }

    // Re-materialize the residual stream from the stored branch outputs.
    // With full payloads this reproduces the forward values bit for bit.
    let mut x_in: Vec<Mat> = Vec::with_capacity(cfg.cycles + 1);
    let mut x_mid: Vec<Mat> = Vec::with_capacity(cfg.cycles);
    x_in.push(rec.x0.clone());
    for record in &rec.cycles {
        let a_hat = record.attn_out.reconstruct();
        let mid = x_in.last().unwrap().add(&a_hat);
        let m_hat = record.mlp_out.reconstruct();
        x_in.push(mid.add(&m_hat));
        x_mid.push(mid);
    }

    let mut grads = Params::zeros(cfg);

    // Output head and final norm.
    let x_final = &x_in[cfg.cycles];
    let f_in = rmsnorm_fwd(x_final, &params.g_final);
    grads.head = f_in.tr_matmul(d_logits);
    let d_f_in = d_logits.matmul_bt(&params.head);
    let (mut d_x, d_g_final) = rmsnorm_bwd(&d_f_in, x_final, &params.g_final);
    grads.g_final = d_g_final;

    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    for (c, record) in rec.cycles.iter().enumerate().rev() {
        // MLP sublayer backward (residual: x_next = x_mid + mlp_out).
        let m_in_hat = rmsnorm_fwd(&x_mid[c], &params.g_mlp);
        let concat_hat = record.mlp_concat.reconstruct();
        let (gate_hat, up_hat) = concat_hat.split_cols(inner);
        let h_hat = record.mlp_inner_out.reconstruct();

        let d_mlp_out = &d_x;
        grads.w_down.add_assign(&h_hat.tr_matmul(d_mlp_out));
        let d_h = d_mlp_out.matmul_bt(&params.w_down);

        let mut d_gate = Mat::zeros(n_rows, inner);
        let mut d_up = Mat::zeros(n_rows, inner);
        for i in 0..n_rows * inner {
            let g = gate_hat.data()[i];
            let u = up_hat.data()[i];
            let dh = d_h.data()[i];
            d_gate.data_mut()[i] = dh * u * silu_prime(g);
            d_up.data_mut()[i] = dh * silu(g);
        }
        grads.w_gate.add_assign(&m_in_hat.tr_matmul(&d_gate));
        grads.w_up.add_assign(&m_in_hat.tr_matmul(&d_up));
        let d_m_in = d_gate
            .matmul_bt(&params.w_gate)
            .add(&d_up.matmul_bt(&params.w_up));
        let (d_norm_in, d_g_mlp) = rmsnorm_bwd(&d_m_in, &x_mid[c], &params.g_mlp);
        grads.g_mlp.add_assign(&d_g_mlp);
        let d_x_mid = d_x.add(&d_norm_in);

        // Attention sublayer backward (residual: x_mid = x_in + attn_out).
        let a_in_hat = rmsnorm_fwd(&x_in[c], &params.g_attn);
        let d_attn_out = &d_x_mid;
        grads.wo.add_assign(&record.ctx.tr_matmul(d_attn_out));
        let d_ctx = d_attn_out.matmul_bt(&params.wo);

        let mut d_q = Mat::zeros(n_rows, d);
        let mut d_k = Mat::zeros(n_rows, d);
        let mut d_v = Mat::zeros(n_rows, d);
        let hd = cfg.head_dim();
        for s in 0..rec.n_seqs {
            let row0 = s * cfg.seq_len;
            for h in 0..cfg.num_heads {
                let col0 = h * hd;
                let probs = &record.probs[s * cfg.num_heads + h];
                let q_blk = block(&record.q_rope, row0, cfg.seq_len, col0, hd);
                let k_blk = block(&record.k_rope, row0, cfg.seq_len, col0, hd);
                let v_blk = block(&record.v, row0, cfg.seq_len, col0, hd);
                let d_ctx_blk = block(&d_ctx, row0, cfg.seq_len, col0, hd);

                let d_probs = d_ctx_blk.matmul_bt(&v_blk);
                let d_v_blk = probs.tr_matmul(&d_ctx_blk);
                let d_scores = softmax_bwd(probs, &d_probs);

                let mut d_q_blk = d_scores.matmul(&k_blk);
                d_q_blk.scale(scale);
                let mut d_k_blk = d_scores.tr_matmul(&q_blk);
                d_k_blk.scale(scale);

                add_block(&mut d_q, row0, col0, &d_q_blk);
                add_block(&mut d_k, row0, col0, &d_k_blk);
                add_block(&mut d_v, row0, col0, &d_v_blk);
            }
        }
        rope_apply(&mut d_q, cfg, true);
        rope_apply(&mut d_k, cfg, true);

        grads.wq.add_assign(&a_in_hat.tr_matmul(&d_q));
        grads.wk.add_assign(&a_in_hat.tr_matmul(&d_k));
        grads.wv.add_assign(&a_in_hat.tr_matmul(&d_v));
        let d_a_in = d_q
            .matmul_bt(&params.wq)
            .add(&d_k.matmul_bt(&params.wk))
            .add(&d_v.matmul_bt(&params.wv));
        let (d_norm_in, d_g_attn) = rmsnorm_bwd(&d_a_in, &x_in[c], &params.g_attn);
        grads.g_attn.add_assign(&d_g_attn);
        d_x = d_x_mid.add(&d_norm_in);
    }

    // Embedding backward.
    for (r, &t) in rec.tokens.iter().enumerate() {
        let row = d_x.row(r).to_vec();
        for (g, v) in grads.embed.row_mut(t as usize).iter_mut().zip(row) {
            *g += v;
        }
    }

    Ok(grads)
}

/// Bidirectional multi-head attention with per-sequence blocks.
fn attention(q: &Mat, k: &Mat, v: &Mat, cfg: &ModelConfig, n_seqs: usize) -> (Mat, Vec<Mat>) {
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = Mat::zeros(q.rows(), cfg.hidden_dim);
    let mut all_probs = Vec::with_capacity(n_seqs * cfg.num_heads);
    for s in 0..n_seqs {
        let row0 = s * cfg.seq_len;
        for h in 0..cfg.num_heads {
            let col0 = h * hd;
            let q_blk = block(q, row0, cfg.seq_len, col0, hd);
            let k_blk = block(k, row0, cfg.seq_len, col0, hd);
            let v_blk = block(v, row0, cfg.seq_len, col0, hd);
            let mut scores = q_blk.matmul_bt(&k_blk);
            scores.scale(scale);
            let probs = softmax_rows(&scores);
            let ctx_blk = probs.matmul(&v_blk);
            add_block(&mut ctx, row0, col0, &ctx_blk);
            all_probs.push(probs);
        }
    }
    (ctx, all_probs)
}

/// Rotary position encoding applied in place per head; `inverse` rotates by
/// the negative angle (the adjoint, used in the backward pass).
fn rope_apply(m: &mut Mat, cfg: &ModelConfig, inverse: bool) {
    let hd = cfg.head_dim();
    let half = hd / 2;
    let seq_len = cfg.seq_len;
    for r in 0..m.rows() {
        let pos = (r % seq_len) as f64;
        let row = m.row_mut(r);
        for h in 0..cfg.num_heads {
            let base = h * hd;
            for i in 0..half {
                let theta = pos * cfg.rope_theta.powf(-2.0 * i as f64 / hd as f64);
                let (sin, cos) = if inverse {
                    ((-theta).sin(), (-theta).cos())
                } else {
                    (theta.sin(), theta.cos())
                };
                let a = row[base + 2 * i];
                let b = row[base + 2 * i + 1];
                row[base + 2 * i] = a * cos - b * sin;
                row[base + 2 * i + 1] = a * sin + b * cos;
            }
        }
    }
}

pub(super) fn rmsnorm_fwd(x: &Mat, gain: &Mat) -> Mat {
    let d = x.cols() as f64;
    let mut out = Mat::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        for (o, (&xv, &g)) in out.row_mut(r).iter_mut().zip(row.iter().zip(gain.row(0))) {
            *o = xv * inv * g;
        }
    }
    out
}

fn rmsnorm_bwd(d_y: &Mat, x: &Mat, gain: &Mat) -> (Mat, Mat) {
    let d = x.cols() as f64;
    let mut d_x = Mat::zeros(x.rows(), x.cols());
    let mut d_gain = Mat::zeros(1, x.cols());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dyr = d_y.row(r);
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / d;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        let mut dot = 0.0;
        for j in 0..xr.len() {
            dot += dyr[j] * gain.row(0)[j] * xr[j];
        }
        let coef = dot * inv * inv * inv / d;
        let dxr = d_x.row_mut(r);
        for j in 0..xr.len() {
            dxr[j] = dyr[j] * gain.row(0)[j] * inv - xr[j] * coef;
            d_gain.row_mut(0)[j] += dyr[j] * xr[j] * inv;
        }
    }
    (d_x, d_gain)
}

fn softmax_rows(scores: &Mat) -> Mat {
    let mut out = Mat::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        let row = scores.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let orow = out.row_mut(r);
        for (o, &s) in orow.iter_mut().zip(row) {
            *o = (s - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

fn softmax_bwd(probs: &Mat, d_probs: &Mat) -> Mat {
    let mut out = Mat::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = d_probs.row(r);
        let inner: f64 = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
        for (o, (&pv, &dv)) in out.row_mut(r).iter_mut().zip(p.iter().zip(dp)) {
            *o = pv * (dv - inner);
        }
    }
    out
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_prime(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

fn block(m: &Mat, row0: usize, rows: usize, col0: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |i, j| m[(row0 + i, col0 + j)])
}

fn add_block(m: &mut Mat, row0: usize, col0: usize, blk: &Mat) {
    for i in 0..blk.rows() {
        for j in 0..blk.cols() {
            m[(row0 + i, col0 + j)] += blk[(i, j)];
        }
    }
}
