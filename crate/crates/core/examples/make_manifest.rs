//! Pairs images with masks by file stem and prints manifest lines.
//!
//! `make_manifest <split> <image_dir> <mask_dir> [mask_suffix]`
//!
//! A mask matches an image when its stem equals the image stem plus
//! `mask_suffix` (default empty), e.g. `ISIC_0000000` and
//! `ISIC_0000000_segmentation` with suffix `_segmentation`. Unmatched images
//! are reported on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mininet::pipeline::Split;

fn stems(dir: &Path) -> std::io::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        if ["png", "pgm", "ppm", "pnm"].contains(&ext.as_str()) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        return Err("usage: make_manifest <split> <image_dir> <mask_dir> [mask_suffix]".into());
    }
    let split: Split = args[0].parse()?;
    let suffix = args.get(3).map(String::as_str).unwrap_or("");
    let images = stems(Path::new(&args[1]))?;
    let masks = stems(Path::new(&args[2]))?;
    for (stem, image) in &images {
        match masks.get(&format!("{stem}{suffix}")) {
            Some(mask) => println!("{stem}\t{}\t{}\t{split}", image.display(), mask.display()),
            None => eprintln!("no mask for {}", image.display()),
        }
    }
    Ok(())
}
