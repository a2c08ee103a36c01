//! Writes the synthetic disk dataset used by `configs/synthetic.cfg`.
//!
//! `cargo run --release -p mininet-core --example make_disks -- [DIR] [SEED]`

use std::path::PathBuf;

use mininet::pipeline::{write_disk_dataset, DiskConfig};

fn main() -> mininet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/disks".into()));
    let seed = args
        .next()
        .map_or(Ok(0), |s| s.parse())
        .map_err(|e| mininet::Error::InvalidArgument(format!("seed: {e}")))?;
    let cfg = DiskConfig {
        seed,
        ..DiskConfig::default()
    };
    let manifest = write_disk_dataset(&dir, &cfg)?;
    println!(
        "{} train + {} test images of {}×{} -> {}",
        cfg.train,
        cfg.test,
        cfg.size,
        cfg.size,
        manifest.display()
    );
    Ok(())
}
