//! In-memory datasets: decoding, resizing and the validation hold-out.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::autodiff::{parallel, Tensor};
use crate::error::{Error, RecordFailure, Result};
use crate::pipeline::image::{mask_tensor, read_image, ChannelMode};
use crate::pipeline::manifest::{Manifest, Split};
use crate::seed;

/// Fraction of training records held out for validation when the manifest
/// names no `val` records.
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// One image in `C×H×W` with values in [0, 1] and its `1×H×W` binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadOptions {
    /// `(height, width)`, each a positive multiple of 4.
    pub target: (usize, usize),
    pub mode: ChannelMode,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            target: (256, 256),
            mode: ChannelMode::Rgb,
            val_fraction: DEFAULT_VAL_FRACTION,
            seed: 0,
        }
    }
}

impl LoadOptions {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.target;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!(
                "target size {h}×{w} must be positive multiples of 4"
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "val_fraction {} must lie in [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Decodes one record's image and mask at the target size.
pub fn load_sample(id: &str, image: &Path, mask: &Path, opts: &LoadOptions) -> Result<Sample> {
    let (h, w) = opts.target;
    let img = read_image(image)?;
    let m = read_image(mask)?;
    if (img.width, img.height) != (m.width, m.height) {
        return Err(Error::Record {
            id: id.to_string(),
            reason: format!(
                "image is {}×{} but mask is {}×{}",
                img.width, img.height, m.width, m.height
            ),
        });
    }
    Ok(Sample {
        id: id.to_string(),
        image: img.to_mode(opts.mode).resize_bilinear(w, h).to_tensor(),
        mask: mask_tensor(&m, w, h),
    })
}

/// Splits off `round(fraction · n)` samples (at least one when fraction > 0)
/// chosen by a seeded shuffle; both parts keep their original order.
pub fn hold_out(
    samples: Vec<Sample>,
    fraction: f64,
    seed_value: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    let n = samples.len();
    if fraction <= 0.0 || n < 2 {
        return (samples, Vec::new());
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed_value, "validation_split"));
    let mut held = vec![false; n];
    for &i in &order[..k] {
        held[i] = true;
    }
    let (mut keep, mut val) = (Vec::new(), Vec::new());
    for (s, h) in samples.into_iter().zip(held) {
        if h {
            val.push(s);
        } else {
            keep.push(s);
        }
    }
    (keep, val)
}

/// Decodes every record, reporting all failures together. Without `val`
/// records a seeded fraction of the training records becomes validation.
pub fn load_dataset(manifest: &Manifest, opts: &LoadOptions) -> Result<Dataset> {
    opts.validate()?;
    if manifest.records.is_empty() {
        return Err(Error::invalid("manifest has no records"));
    }
    let loaded = parallel::map(&manifest.records, |r| {
        load_sample(&r.id, &r.image, &r.mask, opts).map(|s| (r.split, s))
    });
    let mut failures = Vec::new();
    let mut ds = Dataset::default();
    for (r, res) in manifest.records.iter().zip(loaded) {
        match res {
            Ok((Split::Train, s)) => ds.train.push(s),
            Ok((Split::Val, s)) => ds.val.push(s),
            Ok((Split::Test, s)) => ds.test.push(s),
            Err(e) => failures.push(RecordFailure {
                id: r.id.clone(),
                reason: match e {
                    Error::Record { reason, .. } => reason,
                    other => other.to_string(),
                },
            }),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Dataset {
            total: manifest.records.len(),
            failures,
        });
    }
    if ds.val.is_empty() {
        let (train, val) = hold_out(std::mem::take(&mut ds.train), opts.val_fraction, opts.seed);
        ds.train = train;
        ds.val = val;
    }
    Ok(ds)
}

/// Stacks samples into `N×C×H×W` images and `N×1×H×W` masks.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}
