//! Training runs: one seed end to end, and the multi-seed experiment with
//! aggregation and output emission. Seeds run as independent parallel jobs;
//! within a seed, training is sequential.

use std::collections::BTreeMap;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::maze::{read_dataset, split_dataset, MazeInstance};
use crate::model::{
    evaluate, forward, save_checkpoint, train_step, AdamW, Batch, CompressionMode, EvalMetrics,
    ModelError, Params, ProjectorKind, ProjectorSet, SiteId, SiteLog, TrackerSet, TrainHyper,
};

use super::config::{RunConfig, RunMode};
use super::memory::{memory_report, MemoryReport};
use super::metrics::emit_metrics;
use super::HarnessError;

#[derive(Debug, Clone, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub loss: f64,
    pub token_acc: f64,
    pub lr: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub site: String,
    /// Mean fidelity over the cycles of this training step.
    pub fidelity: f64,
    /// Rank after the step's last cycle.
    pub rank: usize,
    /// Most severe event during the step (hard_reset > expanded > rest).
    pub event: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValRow {
    pub epoch: usize,
    pub token_acc_pct: f64,
    pub solve_rate_pct: f64,
}

#[derive(Debug, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub mode: RunMode,
    pub total_steps: usize,
    pub skipped_batches: usize,
    pub steps: Vec<StepRow>,
    pub traces: Vec<TraceRow>,
    pub val_curve: Vec<ValRow>,
    pub final_val: EvalMetrics,
    pub memory: MemoryReport,
    /// Tracker event log (JSON lines), written to events.jsonl.
    #[serde(skip)]
    pub events_jsonl: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub mean_val_acc: f64,
    /// Sample standard deviation (n-1 denominator); 0 for a single seed.
    pub std_val_acc: f64,
    pub mean_solve_rate: f64,
    pub std_solve_rate: f64,
    pub total_skipped_batches: usize,
    pub eligible_savings_pct: f64,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub per_seed: Vec<RunMetrics>,
    pub aggregate: Aggregate,
}

/// Cosine learning-rate schedule with linear warmup.
fn lr_at(step: usize, total: usize, warmup: usize, lr_max: f64, lr_min: f64) -> f64 {
    if step < warmup {
        return lr_max * (step + 1) as f64 / warmup as f64;
    }
    let span = (total.saturating_sub(warmup)).max(1) as f64;
    let t = ((step - warmup) as f64 / span).min(1.0);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

fn severity(event: &str) -> u8 {
    if event.starts_with("hard_reset") {
        3
    } else if event.starts_with("expanded") {
        2
    } else if event.starts_with("init") {
        1
    } else {
        0
    }
}

/// Collapse one training step's per-cycle site logs into one row per site.
fn aggregate_site_logs(step: usize, logs: &[SiteLog]) -> Vec<TraceRow> {
    let mut by_site: BTreeMap<SiteId, (f64, usize, usize, String, u8)> = BTreeMap::new();
    for log in logs {
        let entry = by_site
            .entry(log.site)
            .or_insert((0.0, 0, 0, "power_updated".to_string(), 0));
        entry.0 += log.fidelity;
        entry.1 += 1;
        entry.2 = log.rank;
        let sev = severity(&log.event);
        if sev >= entry.4 {
            entry.3 = log.event.clone();
            entry.4 = sev;
        }
    }
    by_site
        .into_iter()
        .map(|(site, (fid_sum, count, rank, event, _))| TraceRow {
            step,
            site: site.as_str().to_string(),
            fidelity: fid_sum / count.max(1) as f64,
            rank,
            event,
        })
        .collect()
}

fn splitmix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Train one seed and return its metrics. `out_dir` of the config decides
/// where checkpoints land (under `seed_<seed>/checkpoints`).
pub fn run_seed(
    cfg: &RunConfig,
    seed: u64,
    train: &[MazeInstance],
    val: &[MazeInstance],
) -> Result<RunMetrics, HarnessError> {
    let model_cfg = &cfg.model;
    let mut params = Params::init(model_cfg, seed);
    let mut opt = AdamW::new(model_cfg, cfg.run.weight_decay);

    // Compression state for the whole run (trackers persist across epochs).
    let mut tracker_set = match cfg.run.mode {
        RunMode::Laser => {
            let site_configs = SiteId::ALL
                .iter()
                .map(|&s| (s, cfg.tracker.config_for(s, s.dim(model_cfg))))
                .collect();
            Some(TrackerSet::new(
                site_configs,
                cfg.tracker.min_compress_dim,
                splitmix(seed, 0xC0),
            ))
        }
        _ => None,
    };
    let mut projector_set = match cfg.run.mode {
        RunMode::OracleSvd | RunMode::StaticBasis | RunMode::RandomProjection => {
            let kind = match cfg.run.mode {
                RunMode::OracleSvd => ProjectorKind::OracleSvd,
                RunMode::StaticBasis => ProjectorKind::StaticBasis,
                _ => ProjectorKind::RandomProjection,
            };
            let ranks = SiteId::ALL
                .iter()
                .map(|&s| (s, cfg.tracker.rank_for(s, s.dim(model_cfg))))
                .collect();
            Some(ProjectorSet::new(
                kind,
                ranks,
                cfg.tracker.min_compress_dim,
                splitmix(seed, 0xD0),
            ))
        }
        _ => None,
    };

    let batches_per_epoch = train.len().div_ceil(cfg.run.batch_size);
    let total_steps = cfg.run.epochs * batches_per_epoch;
    let hyper_base = TrainHyper {
        lr: cfg.run.lr,
        grad_clip: cfg.run.grad_clip,
    };

    let seed_dir = cfg.run.out_dir.join(format!("seed_{seed}"));
    let ckpt = |params: &Params, step: usize| -> Result<(), HarnessError> {
        if !cfg.run.checkpoint_epochs {
            return Ok(());
        }
        let dir = seed_dir.join("checkpoints").join(format!("step_{step:06}"));
        let config_json = serde_json::to_value(cfg).expect("config serializes");
        save_checkpoint(&dir, params, &config_json, step, seed)?;
        Ok(())
    };

    let mut steps = Vec::with_capacity(total_steps);
    let mut traces = Vec::new();
    let mut val_curve = Vec::new();
    let mut skipped_batches = 0usize;
    let mut step = 0usize;

    ckpt(&params, 0)?;

    for epoch in 0..cfg.run.epochs {
        // Seeded epoch shuffle of the training order.
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, 1000 + epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for chunk in order.chunks(cfg.run.batch_size) {
            let instances: Vec<MazeInstance> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = Batch::from_instances(&instances);
            let lr = lr_at(
                step,
                total_steps,
                cfg.run.warmup_steps,
                hyper_base.lr,
                cfg.run.lr_min,
            );
            let hyper = TrainHyper { lr, ..hyper_base };

            let mut mode = match (&mut tracker_set, &mut projector_set) {
                (Some(ts), _) => CompressionMode::Laser(ts),
                (None, Some(ps)) => CompressionMode::Projector(ps),
                (None, None) => CompressionMode::Full,
            };
            let stats = train_step(&mut params, &mut opt, model_cfg, &batch, &mut mode, hyper)
                .map_err(|e| match e {
                    ModelError::NonFiniteLoss { loss } => HarnessError::SeedFailed {
                        seed,
                        message: format!("non-finite loss {loss} at step {step}"),
                    },
                    other => HarnessError::Model(other),
                })?;

            if stats.skipped {
                skipped_batches += 1;
            }
            traces.extend(aggregate_site_logs(step, &stats.site_logs));
            steps.push(StepRow {
                step,
                loss: stats.loss,
                token_acc: stats.token_acc,
                lr,
                skipped: stats.skipped,
            });
            step += 1;
        }

        let ev = evaluate(&params, model_cfg, val, cfg.run.batch_size);
        val_curve.push(ValRow {
            epoch,
            token_acc_pct: ev.token_acc_pct,
            solve_rate_pct: ev.solve_rate_pct,
        });
        ckpt(&params, step)?;
    }

    let final_val = evaluate(&params, model_cfg, val, cfg.run.batch_size);

    // Final ranks per site for the analytical memory report.
    let b_eff = cfg.run.batch_size * model_cfg.seq_len;
    let final_ranks: Vec<(SiteId, Option<usize>)> = SiteId::ALL
        .iter()
        .map(|&site| {
            let k = if let Some(ts) = &tracker_set {
                ts.tracker(site).map(|t| t.rank())
            } else if let Some(ps) = &projector_set {
                if ps.eligible(site, model_cfg) {
                    Some(ps.ranks()[&site].min(site.dim(model_cfg)))
                } else {
                    None
                }
            } else {
                None
            };
            (site, k)
        })
        .collect();
    let memory = memory_report(model_cfg, &final_ranks, b_eff, cfg.run.bytes_per_element);

    let events_jsonl = tracker_set
        .as_ref()
        .map(|ts| {
            let mut out = String::new();
            for tracker in ts.trackers().values() {
                out.push_str(&tracker.events_jsonl());
            }
            out
        })
        .unwrap_or_default();

    Ok(RunMetrics {
        seed,
        mode: cfg.run.mode,
        total_steps: step,
        skipped_batches,
        steps,
        traces,
        val_curve,
        final_val,
        memory,
        events_jsonl,
    })
}

/// Run every seed of the experiment (in parallel), aggregate, and emit all
/// output files under the configured output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let dataset = read_dataset(&cfg.run.dataset)?;
    if dataset.is_empty() {
        return Err(HarnessError::Config("dataset is empty".into()));
    }
    let cells = dataset[0].seq_len();
    if cells != cfg.model.seq_len {
        return Err(HarnessError::Config(format!(
            "dataset grids have {cells} cells but model.seq_len = {}",
            cfg.model.seq_len
        )));
    }
    if cfg.run.val_count >= dataset.len() {
        return Err(HarnessError::Config(format!(
            "val_count {} leaves no training data (dataset has {})",
            cfg.run.val_count,
            dataset.len()
        )));
    }
    let train_count = dataset.len() - cfg.run.val_count;
    let (train, val) = split_dataset(dataset, train_count, cfg.run.split_seed);

    fs::create_dir_all(&cfg.run.out_dir)?;
    fs::write(cfg.run.out_dir.join("config.toml"), cfg.to_toml_string())?;

    let per_seed: Vec<RunMetrics> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed, &train, &val))
        .collect::<Result<Vec<_>, _>>()?;

    for metrics in &per_seed {
        let dir = cfg.run.out_dir.join(format!("seed_{}", metrics.seed));
        emit_metrics(metrics, &dir)?;
    }

    let aggregate = aggregate_runs(&per_seed);
    super::metrics::write_experiment_outputs(cfg, &per_seed, &aggregate)?;

    Ok(ExperimentResult {
        per_seed,
        aggregate,
    })
}

pub(super) fn aggregate_runs(per_seed: &[RunMetrics]) -> Aggregate {
    let n = per_seed.len() as f64;
    let accs: Vec<f64> = per_seed.iter().map(|m| m.final_val.token_acc_pct).collect();
    let solves: Vec<f64> = per_seed
        .iter()
        .map(|m| m.final_val.solve_rate_pct)
        .collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    let std = |xs: &[f64], m: f64| {
        if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    let mean_acc = mean(&accs);
    let mean_solve = mean(&solves);
    Aggregate {
        seeds: per_seed.iter().map(|m| m.seed).collect(),
        mean_val_acc: mean_acc,
        std_val_acc: std(&accs, mean_acc),
        mean_solve_rate: mean_solve,
        std_solve_rate: std(&solves, mean_solve),
        total_skipped_batches: per_seed.iter().map(|m| m.skipped_batches).sum(),
        eligible_savings_pct: mean(
            &per_seed
                .iter()
                .map(|m| m.memory.eligible_savings_pct)
                .collect::<Vec<_>>(),
        ),
    }
}

/// Collect per-site stacked activations (all cycles) from one forward pass
/// in full mode; shared by the spectral scan and fidelity studies.
pub(super) fn collect_site_activations(
    params: &Params,
    model_cfg: &crate::model::ModelConfig,
    batch: &Batch,
) -> Result<BTreeMap<SiteId, crate::Mat>, ModelError> {
    let mut mode = CompressionMode::Full;
    let pass = forward(params, model_cfg, &batch.tokens, batch.n_seqs, &mut mode)?;
    let mut out = BTreeMap::new();
    for site in SiteId::ALL {
        let parts: Vec<crate::Mat> = pass
            .recording
            .cycles
            .iter()
            .map(|c| c.payload(site).reconstruct())
            .collect();
        let refs: Vec<&crate::Mat> = parts.iter().collect();
        out.insert(site, crate::Mat::vstack(&refs));
    }
    Ok(out)
}
