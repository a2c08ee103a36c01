//! Metric reports over a split and the loss-function ablation harness.

use std::fmt::{self, Write as _};

use crate::architecture::{MiniNet, ModelConfig};
use crate::autodiff::{parallel, Tensor};
use crate::error::{Error, Result};
use crate::objectives::{LossSpec, MetricAccumulator, MetricReport};
use crate::pipeline::dataset::{Dataset, Sample};
use crate::pipeline::manifest::Split;
use crate::pipeline::train::{train, StopReason, TrainConfig};

/// Anything that maps a `C×H×W` image to `1×H×W` foreground probabilities.
pub trait Segmenter: Sync {
    fn segment(&self, image: &Tensor) -> Result<Tensor>;
}

impl Segmenter for MiniNet {
    fn segment(&self, image: &Tensor) -> Result<Tensor> {
        let p = self.predict(image)?;
        let s = p.shape();
        let plane = s[s.len() - 3..].to_vec();
        p.reshape(plane)
    }
}

/// Eval-mode predictions, in sample order.
pub fn predict_all(seg: &impl Segmenter, samples: &[Sample]) -> Result<Vec<Tensor>> {
    parallel::map(samples, |s| seg.segment(&s.image))
        .into_iter()
        .collect()
}

/// Per-image metrics and their means over `samples`.
pub fn evaluate(seg: &impl Segmenter, samples: &[Sample], threshold: f32) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let preds = predict_all(seg, samples)?;
    let mut acc = MetricAccumulator::new(threshold);
    for (s, p) in samples.iter().zip(&preds) {
        acc.add(s.id.clone(), p, &s.mask)?;
    }
    Ok(acc.finish())
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub spec: LossSpec,
    pub best_epoch: usize,
    pub stop: StopReason,
    pub report: MetricReport,
}

/// One trained model per loss spec, all scored on the same split.
#[derive(Clone, Debug)]
pub struct AblationTable {
    pub split: Split,
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.spec.to_string().len())
            .max()
            .unwrap_or(0)
            .max(4);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "Loss", "Jacc", "F1", "Acc", "Se", "Sp"
        );
        for r in &self.rows {
            let m = &r.report.mean;
            let _ = writeln!(
                s,
                "{:<width$} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                r.spec.to_string(),
                m.jaccard,
                m.f1,
                m.accuracy,
                m.sensitivity,
                m.specificity
            );
        }
        f.write_str(&s)
    }
}

/// Trains a fresh `model` for each spec with the shared seeds in `model` and
/// `cfg`, then evaluates on the test split, or validation when there is none.
pub fn run_ablation(
    model: &ModelConfig,
    data: &Dataset,
    specs: &[LossSpec],
    cfg: &TrainConfig,
) -> Result<AblationTable> {
    if specs.len() < 2 {
        return Err(Error::invalid("an ablation needs at least two loss specs"));
    }
    let mut rows = Vec::with_capacity(specs.len());
    let mut split = Split::Test;
    for spec in specs {
        let run = TrainConfig {
            loss: *spec,
            ..*cfg
        };
        let outcome = train(MiniNet::new(*model)?, data, &run)?;
        split = outcome.log.report_split;
        rows.push(AblationRow {
            spec: *spec,
            best_epoch: outcome.log.best_epoch,
            stop: outcome.log.stop,
            report: outcome.log.report,
        });
    }
    Ok(AblationTable { split, rows })
}
