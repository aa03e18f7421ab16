//! Spectral scan over the checkpoints of a finished run.
//!
//! ```text
//! laser-scan --ckpt-dir runs/exp1 --ranks 8,16,32,64
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use laser::harness::{scan_to_csv, spectral_scan, RunConfig};
use laser::maze::{read_dataset, split_dataset};
use laser::model::{load_checkpoint, Params};

#[derive(Parser)]
#[command(about = "Oracle-SVD fidelity curves across training checkpoints")]
struct Args {
    /// Directory searched recursively for checkpoint manifests.
    #[arg(long = "ckpt-dir")]
    ckpt_dir: PathBuf,
    /// Ranks to scan, comma-separated.
    #[arg(long, default_value = "8,16,32,64")]
    ranks: String,
    /// Optional coefficient bit depths to scan (e.g. 8,16,32).
    #[arg(long)]
    bits: Option<String>,
    /// Probe-set size (instances drawn from the run's validation split).
    #[arg(long, default_value_t = 64)]
    probe_count: usize,
    /// Override the dataset recorded in the checkpoints.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output CSV (default: <ckpt-dir>/scan.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn find_checkpoints(root: &Path, found: &mut Vec<PathBuf>) {
    if root.join("manifest.json").is_file() && root.join("params.bin").is_file() {
        found.push(root.to_path_buf());
        return;
    }
    let Ok(entries) = std::fs::read_dir(root) else {
        return;
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        find_checkpoints(&d, found);
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("parsing {what} entry {s:?}: {e}"))
        })
        .collect()
}

fn main() -> Result<()> {
    let args = Args::parse();
    let ranks: Vec<usize> = parse_list(&args.ranks, "--ranks")?;
    let bits: Vec<u32> = match &args.bits {
        Some(raw) => parse_list(raw, "--bits")?,
        None => Vec::new(),
    };

    let mut dirs = Vec::new();
    find_checkpoints(&args.ckpt_dir, &mut dirs);
    if dirs.len() < 2 {
        bail!(
            "found {} checkpoint(s) under {}; the scan needs at least 2",
            dirs.len(),
            args.ckpt_dir.display()
        );
    }

    let mut checkpoints: Vec<(usize, Params)> = Vec::new();
    let mut run_cfg: Option<RunConfig> = None;
    for dir in &dirs {
        let ck = load_checkpoint(dir).with_context(|| format!("loading {}", dir.display()))?;
        if run_cfg.is_none() {
            run_cfg = Some(
                serde_json::from_value(ck.config.clone())
                    .context("checkpoint config is not a run configuration")?,
            );
        }
        checkpoints.push((ck.step, ck.params));
    }
    checkpoints.sort_by_key(|(step, _)| *step);
    checkpoints.dedup_by_key(|(step, _)| *step);
    let cfg = run_cfg.expect("at least one checkpoint");

    // Probe set: a fixed prefix of the run's validation split.
    let dataset_path = args.dataset.unwrap_or_else(|| cfg.run.dataset.clone());
    let dataset = read_dataset(&dataset_path)
        .with_context(|| format!("reading dataset {}", dataset_path.display()))?;
    if cfg.run.val_count >= dataset.len() {
        bail!("dataset smaller than the recorded val_count");
    }
    let train_count = dataset.len() - cfg.run.val_count;
    let (_, val) = split_dataset(dataset, train_count, cfg.run.split_seed);
    let probe = &val[..args.probe_count.min(val.len())];

    let rows = spectral_scan(&checkpoints, &cfg.model, probe, &ranks, &bits)?;
    let csv = scan_to_csv(&rows);
    let out = args.out.unwrap_or_else(|| args.ckpt_dir.join("scan.csv"));
    std::fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "scanned {} checkpoints x {} ranks ({} rows) -> {}",
        checkpoints.len(),
        ranks.len(),
        rows.len(),
        out.display()
    );
    Ok(())
}
