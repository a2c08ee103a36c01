//! Dual multi-residual block and the encoder and decoder stages built on it.
//!
//! ```text
//! s1  = relu(bn(ms3(x)) + bn(ms5(x)))
//! s2  = relu(bn(conv1(s1)) + s1)
//! out = bn(conv1(x)) + bn(ms3'(s2)) + bn(ms5'(s2))
//! ```
//!
//! `ms_k` is a k×k multiscale convolution: dense, or depthwise k×k followed
//! by a pointwise squeeze. In decoder blocks the `ms'` convolutions of the
//! output sum are stride-1 transposed convolutions.

use crate::architecture::params::{Conv, Norm, ParamBuilder};
use crate::architecture::session::Session;
use crate::autodiff::{ConvSpec, Var};
use crate::error::{Error, Result};

/// Internal layout shared by every block of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub depthwise_multiscale: bool,
    /// Width divisor of the pointwise squeeze; 1 keeps a single C→C pointwise.
    pub squeeze_ratio: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            depthwise_multiscale: true,
            squeeze_ratio: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub enum MultiScale {
    Dense(Conv),
    Separable {
        depthwise: Conv,
        pointwise: Vec<Conv>,
    },
}

impl MultiScale {
    fn build(
        b: &mut ParamBuilder,
        name: &str,
        c: usize,
        k: usize,
        transposed: bool,
        cfg: BlockConfig,
    ) -> Result<Self> {
        let spatial = |ch_in: usize, ch_out: usize| {
            if transposed {
                ConvSpec::transposed_same(ch_in, ch_out, k)
            } else {
                ConvSpec::same(ch_in, ch_out, k)
            }
        };
        if !cfg.depthwise_multiscale {
            return Ok(MultiScale::Dense(b.conv(name, spatial(c, c))?));
        }
        b.scope(name, |b| {
            let depthwise = b.conv("dw", spatial(c, c).with_depthwise(true))?;
            let r = cfg.squeeze_ratio;
            let pointwise = if r == 1 {
                vec![b.conv("pw", ConvSpec::same(c, c, 1))?]
            } else {
                vec![
                    b.conv("squeeze", ConvSpec::same(c, c / r, 1))?,
                    b.conv("expand", ConvSpec::same(c / r, c, 1))?,
                ]
            };
            Ok(MultiScale::Separable {
                depthwise,
                pointwise,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            MultiScale::Dense(conv) => s.conv(conv, x),
            MultiScale::Separable {
                depthwise,
                pointwise,
            } => {
                let mut h = s.conv(depthwise, x)?;
                for pw in pointwise {
                    h = s.conv(pw, h)?;
                }
                Ok(h)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DmresBlock {
    pub channels: usize,
    pub transposed_tail: bool,
    pub branch3: MultiScale,
    pub branch3_bn: Norm,
    pub branch5: MultiScale,
    pub branch5_bn: Norm,
    pub refine: Conv,
    pub refine_bn: Norm,
    pub project: Conv,
    pub project_bn: Norm,
    pub out3: MultiScale,
    pub out3_bn: Norm,
    pub out5: MultiScale,
    pub out5_bn: Norm,
}

impl DmresBlock {
    pub fn build(
        b: &mut ParamBuilder,
        name: &str,
        channels: usize,
        transposed_tail: bool,
        cfg: BlockConfig,
    ) -> Result<Self> {
        if cfg.squeeze_ratio == 0 || !channels.is_multiple_of(cfg.squeeze_ratio) {
            return Err(Error::invalid(format!(
                "squeeze ratio {} must divide the block width {channels}",
                cfg.squeeze_ratio
            )));
        }
        b.scope(name, |b| {
            Ok(DmresBlock {
                channels,
                transposed_tail,
                branch3: MultiScale::build(b, "branch3", channels, 3, false, cfg)?,
                branch3_bn: b.norm("branch3_bn", channels)?,
                branch5: MultiScale::build(b, "branch5", channels, 5, false, cfg)?,
                branch5_bn: b.norm("branch5_bn", channels)?,
                refine: b.conv("refine", ConvSpec::same(channels, channels, 1))?,
                refine_bn: b.norm("refine_bn", channels)?,
                project: b.conv("project", ConvSpec::same(channels, channels, 1))?,
                project_bn: b.norm("project_bn", channels)?,
                out3: MultiScale::build(b, "out3", channels, 3, transposed_tail, cfg)?,
                out3_bn: b.norm("out3_bn", channels)?,
                out5: MultiScale::build(b, "out5", channels, 5, transposed_tail, cfg)?,
                out5_bn: b.norm("out5_bn", channels)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.tape.value(x).shape().to_vec();
        let c_axis = shape.len().checked_sub(3).map(|i| shape[i]);
        if c_axis != Some(self.channels) {
            return Err(Error::shape(
                "dmres",
                "channels",
                format!("block width {} applied to input {shape:?}", self.channels),
            ));
        }
        let a = self.branch3.forward(s, x)?;
        let a = s.norm(&self.branch3_bn, a)?;
        let b = self.branch5.forward(s, x)?;
        let b = s.norm(&self.branch5_bn, b)?;
        let s1 = s.tape.add(a, b)?;
        let s1 = s.tape.relu(s1);

        let r = s.conv(&self.refine, s1)?;
        let r = s.norm(&self.refine_bn, r)?;
        let s2 = s.tape.add(r, s1)?;
        let s2 = s.tape.relu(s2);

        let p = s.conv(&self.project, x)?;
        let p = s.norm(&self.project_bn, p)?;
        let o3 = self.out3.forward(s, s2)?;
        let o3 = s.norm(&self.out3_bn, o3)?;
        let o5 = self.out5.forward(s, s2)?;
        let o5 = s.norm(&self.out5_bn, o5)?;
        s.tape.add_all(&[p, o3, o5])
    }
}

fn spatial(s: &Session, x: Var) -> (usize, usize) {
    let shape = s.tape.value(x).shape();
    let n = shape.len();
    (shape[n.saturating_sub(2)], shape[n.saturating_sub(1)])
}

/// DMRes block followed by a stride-2 3×3 convolution that doubles the width.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub block: DmresBlock,
    pub down: Conv,
}

impl EncoderStage {
    pub fn build(
        b: &mut ParamBuilder,
        name: &str,
        channels: usize,
        cfg: BlockConfig,
    ) -> Result<Self> {
        b.scope(name, |b| {
            Ok(EncoderStage {
                block: DmresBlock::build(b, "dmres", channels, false, cfg)?,
                down: b.conv("down", ConvSpec::strided(channels, 2 * channels, 3, 2))?,
            })
        })
    }

    /// Returns `(skip, down)`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let (h, w) = spatial(s, x);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "encoder",
                "spatial",
                format!("{h}×{w} is odd; pad or resize inputs so H and W are multiples of 4"),
            ));
        }
        let skip = self.block.forward(s, x)?;
        let down = s.conv(&self.down, skip)?;
        Ok((skip, down))
    }
}

/// ×2 transposed-convolution upsample, a DMRes block with a transposed tail,
/// and the skip addition.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: Conv,
    pub block: DmresBlock,
}

impl DecoderStage {
    /// `channels` is the output width; the input is twice as wide.
    pub fn build(
        b: &mut ParamBuilder,
        name: &str,
        channels: usize,
        cfg: BlockConfig,
    ) -> Result<Self> {
        b.scope(name, |b| {
            Ok(DecoderStage {
                up: b.conv("up", ConvSpec::upsample(2 * channels, channels))?,
                block: DmresBlock::build(b, "dmres", channels, true, cfg)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var, skip: Var) -> Result<Var> {
        let d = s.conv(&self.up, x)?;
        let (ds, ss) = (s.tape.value(d).shape(), s.tape.value(skip).shape());
        if ds != ss {
            return Err(Error::shape(
                "decoder",
                "skip",
                format!("upsampled {ds:?} vs skip {ss:?}"),
            ));
        }
        let body = self.block.forward(s, d)?;
        s.tape.add(skip, body)
    }
}
