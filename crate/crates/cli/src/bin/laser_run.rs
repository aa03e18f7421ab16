//! Run a training experiment from a TOML config.
//!
//! ```text
//! laser-run --config cfg.toml --mode laser --seeds 100,101,102 --out runs/exp1
//! ```

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use laser::harness::{run_experiment, RunConfig, RunMode};

#[derive(Parser)]
#[command(about = "Train the recursive model under a compression mode")]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's mode (baseline | laser | oracle_svd |
    /// static_basis | random_projection).
    #[arg(long)]
    mode: Option<String>,
    /// Override the config's seeds, comma-separated.
    #[arg(long)]
    seeds: Option<String>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's dataset path.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut cfg = RunConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;

    if let Some(mode) = &args.mode {
        cfg.run.mode = mode.parse::<RunMode>().map_err(anyhow::Error::msg)?;
    }
    if let Some(seeds) = &args.seeds {
        cfg.run.seeds = seeds
            .split(',')
            .map(|s| s.trim().parse::<u64>().context("parsing --seeds"))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(out) = args.out {
        cfg.run.out_dir = out;
    }
    if let Some(dataset) = args.dataset {
        cfg.run.dataset = dataset;
    }

    let result = run_experiment(&cfg).context("experiment failed")?;
    let agg = &result.aggregate;
    println!(
        "mode {}: val acc {:.2} ± {:.2} %, solved {:.2} ± {:.2} %, eligible memory saved {:.2} %",
        cfg.run.mode.as_str(),
        agg.mean_val_acc,
        agg.std_val_acc,
        agg.mean_solve_rate,
        agg.std_solve_rate,
        agg.eligible_savings_pct
    );
    println!("outputs in {}", cfg.run.out_dir.display());
    Ok(())
}
