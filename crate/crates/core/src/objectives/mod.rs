//! Segmentation losses and evaluation metrics.

pub mod losses;
pub mod metrics;

pub use losses::{
    bce_loss, composite_loss, dice_loss, jaccard_loss, total_loss, AlphaSchedule, DiceForm,
    LossSpec, BCE_CLAMP, DEFAULT_SMOOTH,
};
pub use metrics::{
    auc, auc_rank, confusion, ConfusionCounts, ImageMetrics, MetricAccumulator, MetricReport,
    Metrics, RocHistogram, DEFAULT_THRESHOLD, ROC_THRESHOLDS,
};
