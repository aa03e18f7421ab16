//! Generate a maze-pathfinding dataset.
//!
//! ```text
//! maze-gen --size 7 --count 2500 --seed 100 --out data/mazes.bin
//! ```

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use laser::maze::{generate_dataset, write_dataset};

#[derive(Parser)]
#[command(about = "Generate perfect mazes with unique shortest-path targets")]
struct Args {
    /// Grid side length (odd, >= 5); mazes are size x size.
    #[arg(long, default_value_t = 7)]
    size: usize,
    /// Number of instances.
    #[arg(long, default_value_t = 2500)]
    count: usize,
    /// Base RNG seed.
    #[arg(long, default_value_t = 100)]
    seed: u64,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let args = Args::parse();
    if args.size % 2 == 0 || args.size < 5 {
        bail!("--size must be odd and >= 5, got {}", args.size);
    }
    if args.count == 0 {
        bail!("--count must be >= 1");
    }
    let instances = generate_dataset(args.size, args.size, args.count, args.seed);
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    write_dataset(&instances, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} {}x{} mazes (seq_len {}) to {}",
        instances.len(),
        args.size,
        args.size,
        args.size * args.size,
        args.out.display()
    );
    Ok(())
}
