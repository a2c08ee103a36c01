//! The full encoder-decoder.

use crate::architecture::dmres::{BlockConfig, DecoderStage, DmresBlock, EncoderStage};
use crate::architecture::params::{Conv, Norm, ParamBuilder, ParamCount, ParamStore};
use crate::architecture::session::{apply_pending, Mode, PendingStats, Session, Trace};
use crate::autodiff::{ConvSpec, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Width after the stem; the encoder widens to 2× and 4× this.
    pub base_width: usize,
    pub depthwise_multiscale: bool,
    pub squeeze_ratio: usize,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            base_width: 8,
            depthwise_multiscale: true,
            squeeze_ratio: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 {
            return Err(Error::invalid(
                "in_channels and base_width must be positive",
            ));
        }
        if self.squeeze_ratio == 0 || !self.base_width.is_multiple_of(self.squeeze_ratio) {
            return Err(Error::invalid(format!(
                "squeeze_ratio {} must divide base_width {}",
                self.squeeze_ratio, self.base_width
            )));
        }
        Ok(())
    }

    fn block(&self) -> BlockConfig {
        BlockConfig {
            depthwise_multiscale: self.depthwise_multiscale,
            squeeze_ratio: self.squeeze_ratio,
        }
    }
}

/// Labels of the shapes recorded by [`MiniNet::forward_traced`], in order.
pub const TRACE_POINTS: [&str; 7] = [
    "stem",
    "encoder1",
    "encoder2",
    "bottleneck",
    "decoder1",
    "decoder2",
    "prediction",
];

#[derive(Clone, Debug)]
pub struct MiniNet {
    config: ModelConfig,
    store: ParamStore,
    pub stem: Conv,
    pub stem_bn: Norm,
    pub encoder1: EncoderStage,
    pub encoder2: EncoderStage,
    pub bottleneck: DmresBlock,
    pub decoder1: DecoderStage,
    pub decoder2: DecoderStage,
    pub head: Conv,
    pub head_bn: Norm,
    pub classifier: Conv,
}

impl MiniNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (c_in, c) = (config.in_channels, config.base_width);
        let cfg = config.block();
        let mut b = ParamBuilder::new(config.seed);
        let stem = b.conv("stem", ConvSpec::same(c_in, c, 3))?;
        let stem_bn = b.norm("stem_bn", c)?;
        let encoder1 = EncoderStage::build(&mut b, "encoder1", c, cfg)?;
        let encoder2 = EncoderStage::build(&mut b, "encoder2", 2 * c, cfg)?;
        let bottleneck = DmresBlock::build(&mut b, "bottleneck", 4 * c, false, cfg)?;
        let decoder1 = DecoderStage::build(&mut b, "decoder1", 2 * c, cfg)?;
        let decoder2 = DecoderStage::build(&mut b, "decoder2", c, cfg)?;
        let (head, head_bn, classifier) = b.scope("head", |b| {
            Ok((
                b.conv("conv", ConvSpec::same(c, c_in, 1))?,
                b.norm("bn", c_in)?,
                b.conv("classifier", ConvSpec::same(c_in, 1, 1))?,
            ))
        })?;
        Ok(MiniNet {
            config,
            store: b.finish(),
            stem,
            stem_bn,
            encoder1,
            encoder2,
            bottleneck,
            decoder1,
            decoder2,
            head,
            head_bn,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> ParamCount {
        self.store.count()
    }

    pub fn session(&self, mode: Mode, tape: Tape) -> Session<'_> {
        Session::new(&self.store, mode, tape)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if !(shape.len() == 3 || shape.len() == 4) {
            return Err(Error::shape(
                "mini_net",
                "rank",
                format!("expected C×H×W or N×C×H×W, got {shape:?}"),
            ));
        }
        let n = shape.len();
        let (c, h, w) = (shape[n - 3], shape[n - 2], shape[n - 1]);
        if c != self.config.in_channels {
            return Err(Error::shape(
                "mini_net",
                "channels",
                format!(
                    "model expects {} input channels, got {c}",
                    self.config.in_channels
                ),
            ));
        }
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(
                "mini_net",
                "spatial",
                format!("{h}×{w} must be positive multiples of 4; resize or pad inputs"),
            ));
        }
        Ok(())
    }

    /// Probabilities in (0, 1) with one channel and the input's H×W.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.check_input(s.tape.value(x).shape())?;
        let f1 = s.conv(&self.stem, x)?;
        let f1 = s.norm(&self.stem_bn, f1)?;
        s.record_shape("stem", f1);
        let (skip1, e1) = self.encoder1.forward(s, f1)?;
        s.record_shape("encoder1", e1);
        let (skip2, e2) = self.encoder2.forward(s, e1)?;
        s.record_shape("encoder2", e2);
        let bottom = self.bottleneck.forward(s, e2)?;
        s.record_shape("bottleneck", bottom);
        let d1 = self.decoder1.forward(s, bottom, skip2)?;
        s.record_shape("decoder1", d1);
        let d2 = self.decoder2.forward(s, d1, skip1)?;
        s.record_shape("decoder2", d2);
        let h = s.conv(&self.head, d2)?;
        let h = s.norm(&self.head_bn, h)?;
        let h = s.tape.relu(h);
        let logits = s.conv(&self.classifier, h)?;
        let pred = s.tape.sigmoid(logits);
        s.record_shape("prediction", pred);
        Ok(pred)
    }

    /// Eval-mode inference without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = self.session(Mode::Eval, Tape::inference());
        let xv = s.tape.constant(x.clone());
        let out = self.forward(&mut s, xv)?;
        Ok(s.tape.value(out).clone())
    }

    /// Eval-mode inference that also reports the shape after each stage,
    /// labelled by [`TRACE_POINTS`].
    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        let mut s = self.session(Mode::Eval, Tape::inference()).with_trace();
        let xv = s.tape.constant(x.clone());
        let out = self.forward(&mut s, xv)?;
        let pred = s.tape.value(out).clone();
        Ok((pred, s.finish().trace))
    }

    pub fn apply_batch_stats(&mut self, pending: &[PendingStats]) {
        apply_pending(&mut self.store, pending);
    }
}
