//! The training loop: shuffled mini-batches, Adam, the alpha schedule and
//! early stopping on validation loss.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::architecture::{checkpoint, MiniNet, Mode, TrainingCursor};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::objectives::losses::tape as loss_tape;
use crate::objectives::{composite_loss, LossSpec, MetricReport, DEFAULT_THRESHOLD};
use crate::pipeline::adam::{Adam, AdamConfig};
use crate::pipeline::augment::Augment;
use crate::pipeline::dataset::{batch, Dataset, Sample};
use crate::pipeline::evaluate::evaluate;
use crate::pipeline::manifest::Split;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Drives batch order and augmentation draws.
    pub seed: u64,
    pub loss: LossSpec,
    pub augment: Augment,
    /// `learning_rate = 0` freezes the model: no step and no running
    /// statistics update.
    pub adam: AdamConfig,
    /// Probability threshold of the final report.
    pub threshold: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            patience: 4,
            seed: 0,
            loss: LossSpec::default(),
            augment: Augment::default(),
            adam: AdamConfig::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        self.adam.validate()?;
        self.loss.validate()
    }

    pub fn is_frozen(&self) -> bool {
        self.adam.learning_rate == 0.0
    }
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    /// Sample-weighted mean of the enabled loss terms, before alpha.
    pub train_loss: f64,
    /// Mean per-image loss on the validation split in eval mode, before alpha.
    pub val_loss: f64,
    pub alpha: f64,
    /// Sample-weighted mean of the optimized objective, alpha included.
    pub train_objective: f64,
    pub improved: bool,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Completed => "completed",
            StopReason::EarlyStopped => "early-stopped",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    /// Split the final report was computed on.
    pub report_split: Split,
    pub report: MetricReport,
}

#[derive(Serialize)]
struct Summary<'a> {
    best_epoch: usize,
    best_val_loss: f64,
    stop_reason: StopReason,
    epochs_run: usize,
    report_split: &'a str,
    threshold: f32,
    images: usize,
    mean: &'a crate::objectives::Metrics,
    pooled: &'a crate::objectives::Metrics,
}

impl RunLog {
    /// One JSON object per epoch followed by a `summary` object.
    pub fn jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e).expect("record serializes"));
            s.push('\n');
        }
        let summary = Summary {
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            stop_reason: self.stop,
            epochs_run: self.epochs.len(),
            report_split: self.report_split.as_str(),
            threshold: self.report.threshold,
            images: self.report.per_image.len(),
            mean: &self.report.mean,
            pooled: &self.report.pooled,
        };
        let line = serde_json::json!({ "summary": summary });
        s.push_str(&line.to_string());
        s.push('\n');
        s
    }

    /// The log with wall times zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunLog {
        let mut log = self.clone();
        for e in &mut log.epochs {
            e.seconds = 0.0;
        }
        log
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: MiniNet,
    pub cursor: TrainingCursor,
    pub log: RunLog,
}

fn check_finite(value: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what: what() })
    }
}

/// Mean per-image composite loss in eval mode.
pub fn validation_loss(model: &MiniNet, samples: &[Sample], spec: &LossSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let losses = crate::autodiff::parallel::map(samples, |s| {
        let pred = model.predict(&s.image)?;
        composite_loss(&pred, &s.mask, spec)
    });
    let mut sum = 0.0;
    for (s, l) in samples.iter().zip(losses) {
        sum += check_finite(l? as f64, || format!("validation loss of '{}'", s.id))?;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains `model` on `data.train`, stopping early on `data.val`.
pub fn train(model: MiniNet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, None, |_| {})
}

/// [`train`] that also saves the best model to `checkpoint_path` on every
/// improvement and reports each epoch to `on_epoch`.
pub fn train_with(
    mut model: MiniNet,
    data: &Dataset,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if data.val.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let mut adam = Adam::new(model.store(), cfg.adam);
    let mut best = model.clone();
    let mut cursor = TrainingCursor::default();
    let mut best_epoch = 0;
    let mut records = Vec::new();
    let mut stop = StopReason::Completed;
    let n = data.train.len();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let alpha = cfg.loss.alpha(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::stream(cfg.seed, &format!("shuffle/{epoch}")));
        let mut aug_rng = seed::stream(cfg.seed, &format!("augment/{epoch}"));
        // Batch losses attributed to each member, summed in sample order so the
        // epoch mean does not depend on the shuffle.
        let mut per_sample = vec![(0.0f64, 0.0f64); n];

        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<Sample>;
            let refs: Vec<&Sample> = if cfg.augment.is_enabled() {
                augmented = chunk
                    .iter()
                    .map(|&i| cfg.augment.apply(&data.train[i], &mut aug_rng))
                    .collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &data.train[i]).collect()
            };
            let (x, y) = batch(&refs)?;
            let mut s = model.session(Mode::Train, Tape::new());
            let xv = s.tape.constant(x);
            let pred = model.forward(&mut s, xv)?;
            let composite = loss_tape::composite(&mut s.tape, pred, &y, &cfg.loss)?;
            let objective = s.tape.scale(composite, alpha as f32);
            let out = s.finish();
            let describe = || {
                let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
                format!(
                    "loss at epoch {} batch {b} (records {})",
                    epoch + 1,
                    ids.join(", ")
                )
            };
            let lc = check_finite(out.tape.value(composite).data()[0] as f64, describe)?;
            let lo = check_finite(out.tape.value(objective).data()[0] as f64, describe)?;
            for &i in chunk {
                per_sample[i] = (lc, lo);
            }
            if cfg.is_frozen() {
                continue;
            }
            let grads = out.tape.backward(objective)?;
            adam.update(model.store_mut(), |id| {
                out.bindings[id.index()].and_then(|v| grads.get(v))
            })
            .map_err(|e| match e {
                Error::NonFinite { what } => Error::NonFinite {
                    what: format!("{what}, from {}", describe()),
                },
                other => other,
            })?;
            model.apply_batch_stats(&out.pending);
        }

        let (loss_sum, objective_sum) = per_sample
            .iter()
            .fold((0.0, 0.0), |(a, b), (l, o)| (a + l, b + o));
        let val_loss = validation_loss(&model, &data.val, &cfg.loss)?;
        let improved = val_loss < cursor.best_val_loss;
        cursor.epoch = epoch as u32 + 1;
        cursor.alpha = alpha;
        if improved {
            cursor.best_val_loss = val_loss;
            cursor.stale_epochs = 0;
            best_epoch = epoch + 1;
            best = model.clone();
            if let Some(path) = checkpoint_path {
                checkpoint::save(path, &best, &cursor)?;
            }
        } else {
            cursor.stale_epochs += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            val_loss,
            alpha,
            train_objective: objective_sum / n as f64,
            improved,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
        if cursor.stale_epochs as usize >= cfg.patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }

    let (report_split, eval_set) = if data.test.is_empty() {
        (Split::Val, &data.val)
    } else {
        (Split::Test, &data.test)
    };
    let report = evaluate(&best, eval_set, cfg.threshold)?;
    Ok(TrainOutcome {
        best,
        cursor,
        log: RunLog {
            epochs: records,
            best_epoch,
            best_val_loss: cursor.best_val_loss,
            stop,
            report_split,
            report,
        },
    })
}
