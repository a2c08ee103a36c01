//! Synthetic segmentation task: bright noisy disks on a dark noisy field.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::pipeline::dataset::{hold_out, Dataset, Sample, DEFAULT_VAL_FRACTION};
use crate::pipeline::image::write_image;
use crate::pipeline::manifest::{Manifest, Record, Split};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskConfig {
    pub train: usize,
    pub test: usize,
    /// Side length in pixels; a multiple of 4.
    pub size: usize,
    pub max_disks: usize,
    pub seed: u64,
}

impl Default for DiskConfig {
    fn default() -> Self {
        DiskConfig {
            train: 32,
            test: 8,
            size: 64,
            max_disks: 3,
            seed: 0,
        }
    }
}

/// One RGB image and its mask, fully determined by `(seed, label)`.
pub fn disk_sample(cfg: &DiskConfig, label: &str) -> Sample {
    let mut r = seed::stream(cfg.seed, &format!("disk/{label}"));
    let n = cfg.size;
    let count = r.random_range(1..=cfg.max_disks.max(1));
    let lo = (n as f32 / 10.0).max(2.0);
    let hi = (n as f32 / 4.0).max(lo + 1.0);
    let disks: Vec<(f32, f32, f32)> = (0..count)
        .map(|_| {
            let radius = r.random_range(lo..hi);
            let cy = r.random_range(radius..n as f32 - radius);
            let cx = r.random_range(radius..n as f32 - radius);
            (cy, cx, radius)
        })
        .collect();
    let tint: [f32; 3] = [
        r.random_range(0.8..1.0),
        r.random_range(0.8..1.0),
        r.random_range(0.8..1.0),
    ];
    let mut mask = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            if disks
                .iter()
                .any(|(cy, cx, rad)| (py - cy).powi(2) + (px - cx).powi(2) <= rad * rad)
            {
                mask[y * n + x] = 1.0;
            }
        }
    }
    let mut image = vec![0.0f32; 3 * n * n];
    for (c, t) in tint.iter().enumerate() {
        for i in 0..n * n {
            let v = if mask[i] > 0.0 {
                r.random_range(0.55..1.0) * t
            } else {
                r.random_range(0.0..0.35)
            };
            image[c * n * n + i] = v;
        }
    }
    Sample {
        id: label.to_string(),
        image: Tensor::new([3, n, n], image).expect("sized"),
        mask: Tensor::new([1, n, n], mask).expect("sized"),
    }
}

fn samples(cfg: &DiskConfig, split: Split, count: usize) -> Vec<Sample> {
    (0..count)
        .map(|i| disk_sample(cfg, &format!("{split}{i:03}")))
        .collect()
}

/// Train, validation (held out from train) and test samples in memory.
pub fn disk_dataset(cfg: &DiskConfig) -> Dataset {
    let (train, val) = hold_out(
        samples(cfg, Split::Train, cfg.train),
        DEFAULT_VAL_FRACTION,
        cfg.seed,
    );
    Dataset {
        train,
        val,
        test: samples(cfg, Split::Test, cfg.test),
    }
}

/// Writes the dataset as PPM images, PGM masks and `manifest.tsv` under
/// `dir`, returning the manifest path. The validation hold-out is left to
/// the loader.
pub fn write_disk_dataset(dir: &Path, cfg: &DiskConfig) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = Manifest::default();
    for (split, count) in [(Split::Train, cfg.train), (Split::Test, cfg.test)] {
        for s in samples(cfg, split, count) {
            let n = cfg.size;
            let hw = n * n;
            let rgb: Vec<u8> = (0..3 * hw)
                .map(|i| (s.image.data()[(i % 3) * hw + i / 3] * 255.0).round() as u8)
                .collect();
            let mask: Vec<u8> = s.mask.data().iter().map(|v| (v * 255.0) as u8).collect();
            let image_path = dir.join("images").join(format!("{}.ppm", s.id));
            let mask_path = dir.join("masks").join(format!("{}.pgm", s.id));
            write_image(&image_path, n, n, 3, &rgb)?;
            write_image(&mask_path, n, n, 1, &mask)?;
            manifest.records.push(Record {
                id: s.id,
                image: image_path,
                mask: mask_path,
                split,
            });
        }
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest.to_text(dir))?;
    Ok(path)
}
