//! Metrics emission: per-seed metrics.json / traces.csv / events.jsonl,
//! experiment-level summary.txt and plotdata CSVs. All outputs are
//! deterministic for a fixed config and seed (no timestamps, fixed key
//! order).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::RunConfig;
use super::run::{Aggregate, RunMetrics};
use super::HarnessError;

/// Write one run's outputs into `dir`: `metrics.json` (full), `traces.csv`
/// (step, site, fidelity, rank, event), and `events.jsonl`.
pub fn emit_metrics(metrics: &RunMetrics, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;

    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(dir.join("metrics.json"), json)?;

    let mut csv = String::from("step,site,fidelity,rank,event\n");
    for row in &metrics.traces {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.site, row.fidelity, row.rank, row.event
        ));
    }
    fs::write(dir.join("traces.csv"), csv)?;

    fs::write(dir.join("events.jsonl"), &metrics.events_jsonl)?;
    Ok(())
}

/// Experiment-level outputs: summary.txt and plotdata/*.csv.
pub(super) fn write_experiment_outputs(
    cfg: &RunConfig,
    per_seed: &[RunMetrics],
    aggregate: &Aggregate,
) -> Result<(), HarnessError> {
    let out = &cfg.run.out_dir;
    let plot = out.join("plotdata");
    fs::create_dir_all(&plot)?;

    for m in per_seed {
        let mut train_csv = String::from("step,loss,token_acc,lr,skipped\n");
        for s in &m.steps {
            train_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                s.step, s.loss, s.token_acc, s.lr, s.skipped as u8
            ));
        }
        fs::write(plot.join(format!("train_seed{}.csv", m.seed)), train_csv)?;

        let mut val_csv = String::from("epoch,token_acc_pct,solve_rate_pct\n");
        for v in &m.val_curve {
            val_csv.push_str(&format!(
                "{},{},{}\n",
                v.epoch, v.token_acc_pct, v.solve_rate_pct
            ));
        }
        fs::write(plot.join(format!("val_seed{}.csv", m.seed)), val_csv)?;

        let mut fid_csv = String::from("step,site,fidelity,rank,event\n");
        for t in &m.traces {
            fid_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                t.step, t.site, t.fidelity, t.rank, t.event
            ));
        }
        fs::write(plot.join(format!("fidelity_seed{}.csv", m.seed)), fid_csv)?;
    }

    let mut summary = String::new();
    summary.push_str(&format!(
        "mode: {}    seeds: {:?}    epochs: {}    batch: {}\n\n",
        cfg.run.mode.as_str(),
        aggregate.seeds,
        cfg.run.epochs,
        cfg.run.batch_size
    ));
    summary.push_str(&format!(
        "{:<22} {:>18} {:>18} {:>22}\n",
        "Method", "Val Acc (%)", "Val Solved (%)", "Eligible Mem. Saved"
    ));
    summary.push_str(&format!(
        "{:<22} {:>10.2} ± {:<5.2} {:>10.2} ± {:<5.2} {:>21.2}%\n\n",
        cfg.run.mode.as_str(),
        aggregate.mean_val_acc,
        aggregate.std_val_acc,
        aggregate.mean_solve_rate,
        aggregate.std_solve_rate,
        aggregate.eligible_savings_pct
    ));
    summary.push_str(&format!(
        "skipped (hard-reset) batches across seeds: {}\n\n",
        aggregate.total_skipped_batches
    ));
    if let Some(first) = per_seed.first() {
        summary.push_str("per-site memory (seed 0 ranks):\n");
        summary.push_str(&format!(
            "{:<14} {:>6} {:>12} {:>16} {:>16} {:>10}\n",
            "site", "dim", "final rank", "bytes full", "bytes stored", "savings"
        ));
        for s in &first.memory.per_site {
            summary.push_str(&format!(
                "{:<14} {:>6} {:>12} {:>16} {:>16} {:>9.2}%\n",
                s.table_label,
                s.dim,
                s.k_final.map_or("full".to_string(), |k| k.to_string()),
                s.bytes_full,
                s.bytes_compressed,
                s.savings_pct
            ));
        }
    }
    let mut f = fs::File::create(out.join("summary.txt"))?;
    f.write_all(summary.as_bytes())?;

    let agg_json = serde_json::to_string_pretty(aggregate).expect("aggregate serializes");
    fs::write(out.join("aggregate.json"), agg_json)?;
    Ok(())
}
