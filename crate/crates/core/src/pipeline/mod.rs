//! Dataset ingestion, training and evaluation.

pub mod adam;
pub mod augment;
pub mod dataset;
pub mod evaluate;
pub mod image;
pub mod manifest;
pub mod synthetic;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use augment::{Augment, Transform};
pub use dataset::{
    batch, hold_out, load_dataset, load_sample, Dataset, LoadOptions, Sample, DEFAULT_VAL_FRACTION,
};
pub use evaluate::{evaluate, predict_all, run_ablation, AblationRow, AblationTable, Segmenter};
pub use image::{read_image, write_image, ChannelMode, Image, MASK_THRESHOLD};
pub use manifest::{Manifest, Record, Split};
pub use synthetic::{disk_dataset, disk_sample, write_disk_dataset, DiskConfig};
pub use train::{
    train, train_with, validation_loss, EpochRecord, RunLog, StopReason, TrainConfig, TrainOutcome,
};
