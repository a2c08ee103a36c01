//! Soft Dice, Jaccard and binary cross-entropy losses and their
//! alpha-weighted combination.
//!
//! Dice and Jaccard are computed per image on probabilities (soft
//! intersection) with additive smoothing, then averaged over the batch. BCE
//! is the mean over every pixel of the batch.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTH: f32 = 1.0;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Which Dice expression to optimize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiceForm {
    /// `1 - (2·Σpt + ε) / (Σp + Σt + ε)`
    #[default]
    Standard,
    /// `(1 - (Σpt + ε) / (Σp + Σt + ε))²`, without the factor two.
    Literal,
}

/// Epoch-indexed positive weight applied to the summed loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaSchedule {
    Constant(f64),
    /// `initial · decay^epoch`, epoch counted from zero.
    Exponential {
        initial: f64,
        decay: f64,
    },
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule::Exponential {
            initial: 1.0,
            decay: 0.97,
        }
    }
}

impl AlphaSchedule {
    pub fn alpha(&self, epoch: usize) -> f64 {
        match *self {
            AlphaSchedule::Constant(c) => c,
            AlphaSchedule::Exponential { initial, decay } => initial * decay.powi(epoch as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AlphaSchedule::Constant(c) => c > 0.0 && c.is_finite(),
            AlphaSchedule::Exponential { initial, decay } => {
                initial > 0.0 && initial.is_finite() && decay > 0.0 && decay.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "alpha schedule {self:?} must stay strictly positive"
            )))
        }
    }
}

/// Selection and weighting of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub dice: bool,
    pub jaccard: bool,
    pub bce: bool,
    pub alpha: AlphaSchedule,
    pub smooth: f32,
    pub dice_form: DiceForm,
}

impl Default for LossSpec {
    /// Alpha-weighted Dice + BCE + Jaccard.
    fn default() -> Self {
        LossSpec {
            dice: true,
            jaccard: true,
            bce: true,
            alpha: AlphaSchedule::default(),
            smooth: DEFAULT_SMOOTH,
            dice_form: DiceForm::Standard,
        }
    }
}

impl LossSpec {
    pub fn terms(dice: bool, jaccard: bool, bce: bool, alpha: AlphaSchedule) -> Self {
        LossSpec {
            dice,
            jaccard,
            bce,
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dice || self.jaccard || self.bce) {
            return Err(Error::invalid("loss spec enables no term"));
        }
        if !(self.smooth > 0.0 && self.smooth.is_finite()) {
            return Err(Error::invalid(
                "loss smoothing must be a positive finite value",
            ));
        }
        self.alpha.validate()
    }

    pub fn alpha(&self, epoch: usize) -> f64 {
        self.alpha.alpha(epoch)
    }

    pub fn is_weighted(&self) -> bool {
        !matches!(self.alpha, AlphaSchedule::Constant(c) if c == 1.0)
    }
}

/// Short form used in tables and on the command line: `dice`, `bce+jacc`,
/// `alpha(dice+bce+jacc)`.
impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        if self.dice {
            terms.push("dice");
        }
        if self.bce {
            terms.push("bce");
        }
        if self.jaccard {
            terms.push("jacc");
        }
        let inner = terms.join("+");
        if self.is_weighted() {
            write!(f, "alpha({inner})")
        } else {
            f.write_str(&inner)
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// Unweighted terms get a constant alpha of one; `alpha(...)` uses the
    /// default exponential schedule.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (inner, alpha) = match s.strip_prefix("alpha(").and_then(|r| r.strip_suffix(')')) {
            Some(inner) => (inner.to_string(), AlphaSchedule::default()),
            None => (s.clone(), AlphaSchedule::Constant(1.0)),
        };
        let mut spec = LossSpec::terms(false, false, false, alpha);
        for term in inner.split('+').map(str::trim) {
            match term {
                "dice" => spec.dice = true,
                "jacc" | "jaccard" => spec.jaccard = true,
                "bce" => spec.bce = true,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown loss term '{other}' in '{s}'"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn check_pair(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<usize> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            op,
            "pred/target",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if let Some(bad) = target.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::invalid(format!(
            "{op}: target must be binary, found {bad}"
        )));
    }
    if pred.numel() == 0 {
        return Err(Error::invalid(format!("{op}: empty input")));
    }
    // A leading batch axis on 4-D tensors; anything else is one image.
    Ok(if pred.shape().len() == 4 {
        pred.shape()[0].max(1)
    } else {
        1
    })
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Dice { smooth: f64, form: DiceForm },
    Jaccard { smooth: f64 },
    Bce,
}

impl Kind {
    fn name(&self) -> &'static str {
        match self {
            Kind::Dice { .. } => "dice_loss",
            Kind::Jaccard { .. } => "jaccard_loss",
            Kind::Bce => "bce_loss",
        }
    }

    /// Loss value and, on request, its gradient with respect to `pred`.
    fn evaluate(
        &self,
        pred: &[f32],
        target: &[f32],
        images: usize,
        with_grad: bool,
    ) -> (f64, Option<Vec<f32>>) {
        let mut grad = with_grad.then(|| vec![0.0f32; pred.len()]);
        match *self {
            Kind::Bce => {
                let n = pred.len() as f64;
                let mut total = 0.0f64;
                for (i, (p, t)) in pred.iter().zip(target).enumerate() {
                    let raw = *p as f64;
                    let p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let t = *t as f64;
                    total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                    if let Some(g) = grad.as_mut() {
                        if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
                            g[i] = ((-t / p + (1.0 - t) / (1.0 - p)) / n) as f32;
                        }
                    }
                }
                (total / n, grad)
            }
            Kind::Dice { smooth, .. } | Kind::Jaccard { smooth } => {
                let per = pred.len() / images;
                let mut total = 0.0f64;
                for img in 0..images {
                    let range = img * per..(img + 1) * per;
                    let (p, t) = (&pred[range.clone()], &target[range.clone()]);
                    let mut inter = 0.0f64;
                    let mut sum_p = 0.0f64;
                    let mut sum_t = 0.0f64;
                    for (pv, tv) in p.iter().zip(t) {
                        inter += *pv as f64 * *tv as f64;
                        sum_p += *pv as f64;
                        sum_t += *tv as f64;
                    }
                    let b = images as f64;
                    match *self {
                        Kind::Dice {
                            form: DiceForm::Standard,
                            ..
                        } => {
                            let den = sum_p + sum_t + smooth;
                            let num = 2.0 * inter + smooth;
                            total += 1.0 - num / den;
                            if let Some(g) = grad.as_mut() {
                                for (gv, tv) in g[range].iter_mut().zip(t) {
                                    *gv =
                                        (-(2.0 * *tv as f64 * den - num) / (den * den) / b) as f32;
                                }
                            }
                        }
                        Kind::Dice {
                            form: DiceForm::Literal,
                            ..
                        } => {
                            let den = sum_p + sum_t + smooth;
                            let num = inter + smooth;
                            let comp = 1.0 - num / den;
                            total += comp * comp;
                            if let Some(g) = grad.as_mut() {
                                for (gv, tv) in g[range].iter_mut().zip(t) {
                                    let dr = (*tv as f64 * den - num) / (den * den);
                                    *gv = (-2.0 * comp * dr / b) as f32;
                                }
                            }
                        }
                        Kind::Jaccard { .. } => {
                            let num = inter + smooth;
                            let den = sum_p + sum_t - inter + smooth;
                            total += 1.0 - num / den;
                            if let Some(g) = grad.as_mut() {
                                for (gv, tv) in g[range].iter_mut().zip(t) {
                                    let tv = *tv as f64;
                                    *gv = (-(tv * den - num * (1.0 - tv)) / (den * den) / b) as f32;
                                }
                            }
                        }
                        Kind::Bce => unreachable!(),
                    }
                }
                (total / images as f64, grad)
            }
        }
    }

    fn value(&self, pred: &Tensor, target: &Tensor) -> Result<f32> {
        let images = check_pair(self.name(), pred, target)?;
        Ok(self.evaluate(pred.data(), target.data(), images, false).0 as f32)
    }

    fn record(self, tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
        let images = check_pair(self.name(), tape.value(pred), target)?;
        let with_grad = tape.requires_grad(pred);
        let (value, grad) =
            self.evaluate(tape.value(pred).data(), target.data(), images, with_grad);
        Ok(tape.custom(
            &[pred],
            Tensor::scalar(value as f32),
            Box::new(LossOp {
                kind: self,
                grad: grad.unwrap_or_default(),
            }),
        ))
    }
}

struct LossOp {
    kind: Kind,
    grad: Vec<f32>,
}

impl CustomOp for LossOp {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad_output: &[f32],
    ) -> Vec<Option<Vec<f32>>> {
        let g = grad_output[0];
        vec![Some(self.grad.iter().map(|v| v * g).collect())]
    }
}

pub fn dice_loss(pred: &Tensor, target: &Tensor, smooth: f32, form: DiceForm) -> Result<f32> {
    Kind::Dice {
        smooth: smooth as f64,
        form,
    }
    .value(pred, target)
}

pub fn jaccard_loss(pred: &Tensor, target: &Tensor, smooth: f32) -> Result<f32> {
    Kind::Jaccard {
        smooth: smooth as f64,
    }
    .value(pred, target)
}

pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f32> {
    Kind::Bce.value(pred, target)
}

/// Sum of the enabled terms, without alpha.
pub fn composite_loss(pred: &Tensor, target: &Tensor, spec: &LossSpec) -> Result<f32> {
    spec.validate()?;
    let mut terms = Vec::with_capacity(3);
    if spec.dice {
        terms.push(dice_loss(pred, target, spec.smooth, spec.dice_form)?);
    }
    if spec.bce {
        terms.push(bce_loss(pred, target)?);
    }
    if spec.jaccard {
        terms.push(jaccard_loss(pred, target, spec.smooth)?);
    }
    Ok(terms.into_iter().reduce(|a, b| a + b).unwrap_or(0.0))
}

/// `alpha(epoch) · (enabled terms)`.
pub fn total_loss(pred: &Tensor, target: &Tensor, spec: &LossSpec, epoch: usize) -> Result<f32> {
    Ok(spec.alpha(epoch) as f32 * composite_loss(pred, target, spec)?)
}

/// Differentiable losses recorded on a tape.
pub mod tape {
    use super::*;

    pub fn dice(
        tape: &mut Tape,
        pred: Var,
        target: &Tensor,
        smooth: f32,
        form: DiceForm,
    ) -> Result<Var> {
        Kind::Dice {
            smooth: smooth as f64,
            form,
        }
        .record(tape, pred, target)
    }

    pub fn jaccard(tape: &mut Tape, pred: Var, target: &Tensor, smooth: f32) -> Result<Var> {
        Kind::Jaccard {
            smooth: smooth as f64,
        }
        .record(tape, pred, target)
    }

    pub fn bce(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
        Kind::Bce.record(tape, pred, target)
    }

    pub fn composite(tape: &mut Tape, pred: Var, target: &Tensor, spec: &LossSpec) -> Result<Var> {
        spec.validate()?;
        let mut terms = Vec::with_capacity(3);
        if spec.dice {
            terms.push(dice(tape, pred, target, spec.smooth, spec.dice_form)?);
        }
        if spec.bce {
            terms.push(bce(tape, pred, target)?);
        }
        if spec.jaccard {
            terms.push(jaccard(tape, pred, target, spec.smooth)?);
        }
        tape.add_all(&terms)
    }

    pub fn total(
        tape: &mut Tape,
        pred: Var,
        target: &Tensor,
        spec: &LossSpec,
        epoch: usize,
    ) -> Result<Var> {
        let sum = composite(tape, pred, target, spec)?;
        Ok(tape.scale(sum, spec.alpha(epoch) as f32))
    }
}
