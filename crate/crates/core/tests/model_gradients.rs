//! Gradient correctness of the hand-written backward pass: central finite
//! differences on every parameter block, weight-tying structure against an
//! untied unrolled reference, lossless-compression bit-identity, and the
//! scalar-by-scalar reference forward.

mod common;

use laser::model::{
    backward, forward, forward_with_cycle_params, softmax_cross_entropy, Batch, CompressionMode,
    ModelConfig, Params, TrackerSet,
};
use laser::tracker::TrackerConfig;
use laser::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_batch(cfg: &ModelConfig, n_seqs: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_seqs * cfg.seq_len;
    // Cover the whole vocabulary so every embedding row gets a gradient.
    let tokens: Vec<u8> = (0..n).map(|i| ((i % 5) as u8 + rng.gen_range(0..5)) % 5).collect();
    let targets: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
    Batch {
        tokens,
        targets,
        n_seqs,
    }
}

fn loss_of(params: &Params, cfg: &ModelConfig, batch: &Batch) -> f64 {
    let mut mode = CompressionMode::Full;
    let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();
    let (loss, _) = softmax_cross_entropy(&pass.logits, &batch.targets);
    loss
}

fn analytic_grads(params: &Params, cfg: &ModelConfig, batch: &Batch) -> Params {
    let mut mode = CompressionMode::Full;
    let pass = forward(params, cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();
    let (_, d_logits) = softmax_cross_entropy(&pass.logits, &batch.targets);
    backward(params, cfg, &pass.recording, &d_logits).unwrap()
}

#[test]
fn full_mode_gradients_match_central_finite_differences() {
    let cfg = ModelConfig::tiny(2, 6);
    let params = Params::init(&cfg, 7);
    let batch = tiny_batch(&cfg, 3, 11);
    let grads = analytic_grads(&params, &cfg, &batch);

    let h = 1e-5;
    for (name, _) in params.named() {
        let analytic = grads.block(name).unwrap().clone();
        let shape = analytic.shape();
        let mut numeric = Mat::zeros(shape.0, shape.1);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let mut p_plus = params.clone();
                p_plus.block_mut(name).unwrap()[(i, j)] += h;
                let mut p_minus = params.clone();
                p_minus.block_mut(name).unwrap()[(i, j)] -= h;
                numeric[(i, j)] =
                    (loss_of(&p_plus, &cfg, &batch) - loss_of(&p_minus, &cfg, &batch)) / (2.0 * h);
            }
        }
        let rel = numeric.sub(&analytic).frobenius_norm() / numeric.frobenius_norm().max(1e-12);
        assert!(
            rel < 1e-4,
            "block {name}: finite-difference relative error {rel:.3e}"
        );
    }
}

#[test]
fn tied_gradient_is_sum_of_untied_cycle_gradients() {
    // Perturbing only cycle c's copy of the parameters and differencing
    // gives that cycle's gradient contribution; the tied backward must
    // equal the sum over cycles.
    let cfg = ModelConfig::tiny(3, 4);
    let params = Params::init(&cfg, 3);
    let batch = tiny_batch(&cfg, 2, 5);
    let tied = analytic_grads(&params, &cfg, &batch);

    let untied_loss = |per_cycle: &[Params]| -> f64 {
        let refs: Vec<&Params> = per_cycle.iter().collect();
        let mut mode = CompressionMode::Full;
        let pass =
            forward_with_cycle_params(&refs, &cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();
        let (loss, _) = softmax_cross_entropy(&pass.logits, &batch.targets);
        loss
    };

    let h = 1e-5;
    // Block-weight gradients accumulate across cycles; embed/head/final
    // norm enter once, which the sum construction also covers.
    for name in ["wq", "wo", "w_gate", "w_down", "g_attn", "g_mlp"] {
        let analytic = tied.block(name).unwrap();
        let shape = analytic.shape();
        // Sample a few entries to keep runtime sane.
        let entries = [(0usize, 0usize), (shape.0 / 2, shape.1 / 2), (shape.0 - 1, shape.1 - 1)];
        for &(i, j) in &entries {
            let mut summed = 0.0;
            for c in 0..cfg.cycles {
                let base: Vec<Params> = (0..cfg.cycles).map(|_| params.clone()).collect();
                let mut plus = base.clone();
                plus[c].block_mut(name).unwrap()[(i, j)] += h;
                let mut minus = base;
                minus[c].block_mut(name).unwrap()[(i, j)] -= h;
                summed += (untied_loss(&plus) - untied_loss(&minus)) / (2.0 * h);
            }
            let got = analytic[(i, j)];
            assert!(
                (summed - got).abs() < 1e-6 * summed.abs().max(1.0),
                "{name}[{i},{j}]: untied sum {summed:.6e} vs tied {got:.6e}"
            );
        }
    }
}

#[test]
fn full_rank_laser_gradients_are_bit_identical() {
    let cfg = ModelConfig::tiny(2, 6);
    let params = Params::init(&cfg, 19);
    // Enough rows (n_seqs * seq_len >= 2 * mlp_inner) that the initial SVD
    // can reach full rank at every site.
    let batch = tiny_batch(&cfg, 8, 23);

    let g_full = analytic_grads(&params, &cfg, &batch);

    // Full-rank tracking on every site: initial rank is each site's full
    // dimension (clamp handles the rest), so the code path is lossless.
    let tracker_cfg = TrackerConfig {
        initial_rank: 2 * cfg.mlp_inner,
        max_rank: 2 * cfg.mlp_inner,
        ..TrackerConfig::default()
    };
    let mut set = TrackerSet::uniform(tracker_cfg, 1, 99);
    let mut mode = CompressionMode::Laser(&mut set);
    let pass = forward(&params, &cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();
    let (_, d_logits) = softmax_cross_entropy(&pass.logits, &batch.targets);
    let g_laser = backward(&params, &cfg, &pass.recording, &d_logits).unwrap();

    assert_eq!(g_full, g_laser);
    // Tape payloads reconstruct the originals exactly on this path.
    for record in &pass.recording.cycles {
        for site in laser::model::SiteId::ALL {
            assert!(!record.payload(site).is_compressed());
        }
    }
}

#[test]
fn all_sites_ineligible_matches_full_mode_bitwise() {
    let cfg = ModelConfig::tiny(2, 6);
    let params = Params::init(&cfg, 31);
    let batch = tiny_batch(&cfg, 3, 37);

    let mut mode = CompressionMode::Full;
    let pass_full = forward(&params, &cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();

    // min_compress_dim larger than any site: every payload stays full.
    let mut set = TrackerSet::uniform(TrackerConfig::default(), 10_000, 1);
    let mut mode = CompressionMode::Laser(&mut set);
    let pass_laser = forward(&params, &cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();

    assert_eq!(pass_full.logits, pass_laser.logits);
    assert!(pass_laser.site_logs.is_empty());
    let (_, d1) = softmax_cross_entropy(&pass_full.logits, &batch.targets);
    let g1 = backward(&params, &cfg, &pass_full.recording, &d1).unwrap();
    let g2 = backward(&params, &cfg, &pass_laser.recording, &d1).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn loss_invariant_under_batch_reordering() {
    let cfg = ModelConfig::tiny(2, 6);
    let params = Params::init(&cfg, 41);
    let batch = tiny_batch(&cfg, 4, 43);

    // Reverse the sequences within the batch.
    let l = cfg.seq_len;
    let mut rev_tokens = Vec::new();
    let mut rev_targets = Vec::new();
    for s in (0..batch.n_seqs).rev() {
        rev_tokens.extend_from_slice(&batch.tokens[s * l..(s + 1) * l]);
        rev_targets.extend_from_slice(&batch.targets[s * l..(s + 1) * l]);
    }
    let reversed = Batch {
        tokens: rev_tokens,
        targets: rev_targets,
        n_seqs: batch.n_seqs,
    };

    let loss_a = loss_of(&params, &cfg, &batch);
    let loss_b = loss_of(&params, &cfg, &reversed);
    assert!((loss_a - loss_b).abs() < 1e-10 * loss_a.abs().max(1.0));

    let ga = analytic_grads(&params, &cfg, &batch);
    let gb = analytic_grads(&params, &cfg, &reversed);
    for ((name, a), (_, b)) in ga.named().iter().zip(gb.named().iter()) {
        let rel = a.sub(b).frobenius_norm() / a.frobenius_norm().max(1e-12);
        assert!(rel < 1e-10, "block {name} differs under reordering: {rel:.2e}");
    }
}

#[test]
fn single_cycle_forward_matches_scalar_reference() {
    // Hand-computed reference forward on a 2-token toy config, written as
    // plain scalar loops with no shared code.
    let cfg = ModelConfig {
        hidden_dim: 4,
        num_heads: 1,
        mlp_inner: 12,
        cycles: 1,
        seq_len: 2,
        vocab_size: 5,
        rope_theta: 10000.0,
    };
    let params = Params::init(&cfg, 57);
    let tokens = vec![2u8, 3u8];

    let mut mode = CompressionMode::Full;
    let pass = forward(&params, &cfg, &tokens, 1, &mut mode).unwrap();

    // Tape: exactly one entry per site.
    assert_eq!(pass.recording.entries_per_site(), 1);

    let d = 4usize;
    let inner = 12usize;
    let eps = 1e-6;

    let rms_norm = |x: &[f64], gain: &Mat| -> Vec<f64> {
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let inv = 1.0 / (ms + eps).sqrt();
        x.iter()
            .enumerate()
            .map(|(j, v)| v * inv * gain[(0, j)])
            .collect()
    };
    let matvec = |x: &[f64], w: &Mat| -> Vec<f64> {
        (0..w.cols())
            .map(|j| (0..w.rows()).map(|i| x[i] * w[(i, j)]).sum())
            .collect()
    };

    // Embedding rows.
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| params.embed.row(t as usize).to_vec())
        .collect();

    // Attention with a single head over two positions.
    let a_in: Vec<Vec<f64>> = x.iter().map(|r| rms_norm(r, &params.g_attn)).collect();
    let mut q: Vec<Vec<f64>> = a_in.iter().map(|r| matvec(r, &params.wq)).collect();
    let mut k: Vec<Vec<f64>> = a_in.iter().map(|r| matvec(r, &params.wk)).collect();
    let v: Vec<Vec<f64>> = a_in.iter().map(|r| matvec(r, &params.wv)).collect();
    // RoPE on pairs (0,1) and (2,3); head_dim = 4.
    for pos in 0..2 {
        for vec in [&mut q[pos], &mut k[pos]] {
            for pair in 0..2 {
                let theta = pos as f64 * 10000.0f64.powf(-2.0 * pair as f64 / 4.0);
                let (s, c) = theta.sin_cos();
                let a = vec[2 * pair];
                let b = vec[2 * pair + 1];
                vec[2 * pair] = a * c - b * s;
                vec[2 * pair + 1] = a * s + b * c;
            }
        }
    }
    let scale = 1.0 / (4.0f64).sqrt();
    let mut ctx = vec![vec![0.0f64; d]; 2];
    for i in 0..2 {
        let s0: f64 = (0..d).map(|c| q[i][c] * k[0][c]).sum::<f64>() * scale;
        let s1: f64 = (0..d).map(|c| q[i][c] * k[1][c]).sum::<f64>() * scale;
        let m = s0.max(s1);
        let e0 = (s0 - m).exp();
        let e1 = (s1 - m).exp();
        let z = e0 + e1;
        for c in 0..d {
            ctx[i][c] = (e0 * v[0][c] + e1 * v[1][c]) / z;
        }
    }
    let attn_out: Vec<Vec<f64>> = ctx.iter().map(|r| matvec(r, &params.wo)).collect();
    for i in 0..2 {
        for j in 0..d {
            x[i][j] += attn_out[i][j];
        }
    }

    // Gated MLP.
    let m_in: Vec<Vec<f64>> = x.iter().map(|r| rms_norm(r, &params.g_mlp)).collect();
    for i in 0..2 {
        let g = matvec(&m_in[i], &params.w_gate);
        let u = matvec(&m_in[i], &params.w_up);
        let mut h = vec![0.0; inner];
        for j in 0..inner {
            let sig = 1.0 / (1.0 + (-g[j]).exp());
            h[j] = g[j] * sig * u[j];
        }
        let mlp = matvec(&h, &params.w_down);
        for j in 0..d {
            x[i][j] += mlp[j];
        }
    }

    // Final norm and head.
    for i in 0..2 {
        let f_in = rms_norm(&x[i], &params.g_final);
        let logits = matvec(&f_in, &params.head);
        for j in 0..5 {
            assert!(
                (logits[j] - pass.logits[(i, j)]).abs() < 1e-8,
                "logit ({i},{j}): reference {} vs forward {}",
                logits[j],
                pass.logits[(i, j)]
            );
        }
    }
}

#[test]
fn twenty_four_cycles_record_twenty_four_entries_per_site() {
    let cfg = ModelConfig {
        hidden_dim: 8,
        num_heads: 2,
        mlp_inner: 24,
        cycles: 24,
        seq_len: 9,
        vocab_size: 5,
        rope_theta: 10000.0,
    };
    let params = Params::init(&cfg, 71);
    let batch = tiny_batch(&cfg, 2, 73);
    let mut mode = CompressionMode::Full;
    let pass = forward(&params, &cfg, &batch.tokens, batch.n_seqs, &mut mode).unwrap();
    assert_eq!(pass.recording.entries_per_site(), 24);
    // The full-scale shape remains constructible.
    assert!(ModelConfig::paper_shaped().validate().is_ok());
}
