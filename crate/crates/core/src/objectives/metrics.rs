//! Hard-threshold pixel metrics and ROC area.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f32 = 0.5;
/// Number of evenly spaced thresholds `k / 255` swept for the ROC curve.
pub const ROC_THRESHOLDS: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.fp == 0)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp, self.fn_ == 0)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total(), true)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, true)
    }

    pub fn jaccard(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_, true)
    }
}

/// `num / den`, or the fallback when the denominator is empty: 1.0 if the
/// prediction is also empty on that class, 0.0 otherwise.
fn ratio(num: u64, den: u64, prediction_empty: bool) -> f64 {
    if den == 0 {
        if prediction_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

fn check_shapes(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            op,
            "pred/target",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    Ok(())
}

/// A pixel is predicted positive iff `pred >= threshold`; target pixels are
/// positive iff `> 0.5`.
pub fn confusion(pred: &Tensor, target: &Tensor, threshold: f32) -> Result<ConfusionCounts> {
    check_shapes("confusion", pred, target)?;
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.data().iter().zip(target.data()) {
        match (*p >= threshold, *t > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Score histogram over the threshold grid; enough to rebuild the ROC curve
/// and to pool several images.
#[derive(Clone, Debug)]
pub struct RocHistogram {
    // Index 0 holds scores below every threshold; index k + 1 holds scores in
    // [k/255, (k+1)/255).
    pos: Vec<u64>,
    neg: Vec<u64>,
}

impl Default for RocHistogram {
    fn default() -> Self {
        RocHistogram {
            pos: vec![0; ROC_THRESHOLDS + 1],
            neg: vec![0; ROC_THRESHOLDS + 1],
        }
    }
}

fn threshold(k: usize) -> f64 {
    k as f64 / (ROC_THRESHOLDS - 1) as f64
}

fn bin(score: f32) -> usize {
    let s = score as f64;
    if s.is_nan() || s < 0.0 {
        return 0;
    }
    let mut k = ((s * (ROC_THRESHOLDS - 1) as f64).floor() as usize).min(ROC_THRESHOLDS - 1);
    while k + 1 < ROC_THRESHOLDS && threshold(k + 1) <= s {
        k += 1;
    }
    while k > 0 && threshold(k) > s {
        k -= 1;
    }
    k + 1
}

impl RocHistogram {
    pub fn from_scores(pred: &Tensor, target: &Tensor) -> Result<Self> {
        check_shapes("roc", pred, target)?;
        let mut h = RocHistogram::default();
        for (p, t) in pred.data().iter().zip(target.data()) {
            let b = bin(*p);
            if *t > 0.5 {
                h.pos[b] += 1;
            } else {
                h.neg[b] += 1;
            }
        }
        Ok(h)
    }

    pub fn merge(&mut self, other: &RocHistogram) {
        for (a, b) in self.pos.iter_mut().zip(&other.pos) {
            *a += b;
        }
        for (a, b) in self.neg.iter_mut().zip(&other.neg) {
            *a += b;
        }
    }

    pub fn positives(&self) -> u64 {
        self.pos.iter().sum()
    }

    pub fn negatives(&self) -> u64 {
        self.neg.iter().sum()
    }

    /// Trapezoidal area under the (FPR, TPR) curve with the end points
    /// (0, 0) and (1, 1). `None` when either class is absent.
    pub fn auc(&self) -> Option<f64> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return None;
        }
        let mut area = 0.0f64;
        let (mut prev_x, mut prev_y) = (0.0f64, 0.0f64);
        let (mut tp, mut fp) = (0u64, 0u64);
        // Sweeping thresholds from high to low grows both rates.
        for b in (1..=ROC_THRESHOLDS).rev() {
            tp += self.pos[b];
            fp += self.neg[b];
            let (x, y) = (fp as f64 / n as f64, tp as f64 / p as f64);
            area += (x - prev_x) * (prev_y + y) / 2.0;
            prev_x = x;
            prev_y = y;
        }
        area += (1.0 - prev_x) * (prev_y + 1.0) / 2.0;
        Some(area)
    }
}

/// ROC area over the 256-threshold grid.
pub fn auc(pred: &Tensor, target: &Tensor) -> Result<Option<f64>> {
    Ok(RocHistogram::from_scores(pred, target)?.auc())
}

/// Exact ROC area from score ranks (ties count half); unlike the grid form
/// it depends only on the ordering of the scores.
pub fn auc_rank(pred: &Tensor, target: &Tensor) -> Result<Option<f64>> {
    check_shapes("auc_rank", pred, target)?;
    let mut scored: Vec<(f32, bool)> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (*p, *t > 0.5))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (p, n) = scored.iter().fold(
        (0u64, 0u64),
        |(p, n), (_, t)| if *t { (p + 1, n) } else { (p, n + 1) },
    );
    if p == 0 || n == 0 {
        return Ok(None);
    }
    let mut wins = 0.0f64;
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let (tie_pos, tie_neg) =
            scored[i..j].iter().fold(
                (0u64, 0u64),
                |(p, n), (_, t)| if *t { (p + 1, n) } else { (p, n + 1) },
            );
        wins += tie_pos as f64 * (negatives_below as f64 + tie_neg as f64 / 2.0);
        negatives_below += tie_neg;
        i = j;
    }
    Ok(Some(wins / (p as f64 * n as f64)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub jaccard: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
}

impl Metrics {
    /// `auc` of `None` (one class absent) takes the degenerate fallback from
    /// the hard counts.
    pub fn from_counts(c: &ConfusionCounts, auc: Option<f64>) -> Self {
        let auc = auc.unwrap_or(if c.fp == 0 && c.fn_ == 0 { 1.0 } else { 0.0 });
        Metrics {
            jaccard: c.jaccard(),
            f1: c.f1(),
            accuracy: c.accuracy(),
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            auc,
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.jaccard,
            self.f1,
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.auc,
        ]
    }

    pub const NAMES: [&'static str; 6] = [
        "jaccard",
        "f1",
        "accuracy",
        "sensitivity",
        "specificity",
        "auc",
    ];
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

/// Per-image metrics, their mean, and metrics of all pixels pooled.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub threshold: f32,
    pub per_image: Vec<ImageMetrics>,
    pub mean: Metrics,
    pub pooled: Metrics,
    pub pooled_counts: ConfusionCounts,
}

/// Builds a [`MetricReport`] one image at a time.
#[derive(Debug)]
pub struct MetricAccumulator {
    threshold: f32,
    per_image: Vec<ImageMetrics>,
    counts: ConfusionCounts,
    roc: RocHistogram,
}

impl MetricAccumulator {
    pub fn new(threshold: f32) -> Self {
        MetricAccumulator {
            threshold,
            per_image: Vec::new(),
            counts: ConfusionCounts::default(),
            roc: RocHistogram::default(),
        }
    }

    pub fn add(
        &mut self,
        id: impl Into<String>,
        pred: &Tensor,
        target: &Tensor,
    ) -> Result<&ImageMetrics> {
        let counts = confusion(pred, target, self.threshold)?;
        let roc = RocHistogram::from_scores(pred, target)?;
        self.counts.merge(&counts);
        self.roc.merge(&roc);
        self.per_image.push(ImageMetrics {
            id: id.into(),
            metrics: Metrics::from_counts(&counts, roc.auc()),
            counts,
        });
        Ok(self.per_image.last().expect("just pushed"))
    }

    pub fn finish(self) -> MetricReport {
        let n = self.per_image.len().max(1) as f64;
        let mut sums = [0.0f64; 6];
        for im in &self.per_image {
            for (s, v) in sums.iter_mut().zip(im.metrics.values()) {
                *s += v;
            }
        }
        let mean = Metrics {
            jaccard: sums[0] / n,
            f1: sums[1] / n,
            accuracy: sums[2] / n,
            sensitivity: sums[3] / n,
            specificity: sums[4] / n,
            auc: sums[5] / n,
        };
        MetricReport {
            threshold: self.threshold,
            pooled: Metrics::from_counts(&self.counts, self.roc.auc()),
            pooled_counts: self.counts,
            mean,
            per_image: self.per_image,
        }
    }
}

impl MetricReport {
    /// Human-readable table in percent; the per-image mean is listed first.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "", "Jacc", "F1", "Acc", "Se", "Sp", "AUC"
        );
        for (label, m) in [("mean", &self.mean), ("pooled", &self.pooled)] {
            let _ = write!(s, "{label:<12}");
            for v in m.values() {
                let _ = write!(s, " {:>8.2}", v * 100.0);
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "images {}  threshold {}",
            self.per_image.len(),
            self.threshold
        );
        s
    }

    /// One JSON object per image.
    pub fn jsonl(&self) -> String {
        self.per_image
            .iter()
            .map(|im| serde_json::to_string(im).expect("metrics serialize") + "\n")
            .collect()
    }
}
