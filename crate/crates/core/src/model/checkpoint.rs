//! Checkpoint format: named parameter blocks as little-endian 64-bit floats
//! in `params.bin`, described by a JSON manifest `{config, step, rng_seed,
//! blocks}`. The config is stored as opaque JSON so the harness can embed
//! its full run configuration.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Mat;

use super::params::Params;
use super::ModelError;

const FORMAT: &str = "laser-ckpt-v1";

#[derive(Debug, Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    rows: usize,
    cols: usize,
    offset_bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    step: usize,
    rng_seed: u64,
    config: serde_json::Value,
    blocks: Vec<BlockMeta>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub params: Params,
    pub config: serde_json::Value,
    pub step: usize,
    pub rng_seed: u64,
}

pub fn save_checkpoint(
    dir: &Path,
    params: &Params,
    config: &serde_json::Value,
    step: usize,
    rng_seed: u64,
) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let mut blocks = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (name, m) in params.named() {
        blocks.push(BlockMeta {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            offset_bytes: payload.len(),
        });
        for &v in m.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        step,
        rng_seed,
        config: config.clone(),
        blocks,
    };
    let mut f = fs::File::create(dir.join("params.bin"))?;
    f.write_all(&payload)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, ModelError> {
    let manifest_raw = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_raw)
        .map_err(|e| ModelError::BadCheckpoint(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(ModelError::BadCheckpoint(format!(
            "unknown format {:?}",
            manifest.format
        )));
    }
    let payload = fs::read(dir.join("params.bin"))?;

    let mut loaded: Vec<(String, Mat)> = Vec::with_capacity(manifest.blocks.len());
    for meta in &manifest.blocks {
        let n = meta.rows * meta.cols;
        let end = meta.offset_bytes + n * 8;
        if end > payload.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "block {} extends past end of params.bin",
                meta.name
            )));
        }
        let data: Vec<f64> = payload[meta.offset_bytes..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push((meta.name.clone(), Mat::from_vec(meta.rows, meta.cols, data)));
    }

    let params = params_from_named(loaded)?;
    Ok(Checkpoint {
        params,
        config: manifest.config,
        step: manifest.step,
        rng_seed: manifest.rng_seed,
    })
}

fn params_from_named(blocks: Vec<(String, Mat)>) -> Result<Params, ModelError> {
    let take = |name: &str| -> Result<Mat, ModelError> {
        blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| ModelError::BadCheckpoint(format!("missing block {name}")))
    };
    Ok(Params {
        embed: take("embed")?,
        wq: take("wq")?,
        wk: take("wk")?,
        wv: take("wv")?,
        wo: take("wo")?,
        w_gate: take("w_gate")?,
        w_up: take("w_up")?,
        w_down: take("w_down")?,
        g_attn: take("g_attn")?,
        g_mlp: take("g_mlp")?,
        g_final: take("g_final")?,
        head: take("head")?,
    })
}
