//! Direct (nested-loop) convolution kernels.
//!
//! Every output element is accumulated in a fixed order: input channel, then
//! kernel row, then kernel column, starting from zero, with the bias added
//! last. Taps falling into the zero padding are skipped. The loops are arranged
//! plane-by-plane so the innermost loop runs over contiguous memory, but the
//! per-element summation order is exactly that of the textbook six-deep loop.

use crate::autodiff::parallel::for_each_plane;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution or transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depthwise: bool,
    pub transposed: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self::strided(in_channels, out_channels, kernel_size, 1)
    }

    pub fn strided(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    ) -> Self {
        ConvSpec {
            kernel_size,
            stride,
            padding: kernel_size.saturating_sub(1) / 2,
            output_padding: 0,
            in_channels,
            out_channels,
            depthwise: false,
            transposed: false,
        }
    }

    pub fn depthwise(channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            depthwise: true,
            ..Self::same(channels, channels, kernel_size)
        }
    }

    /// 3×3 stride-2 transposed convolution that exactly doubles H and W.
    pub fn upsample(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_size: 3,
            stride: 2,
            padding: 1,
            output_padding: 1,
            in_channels,
            out_channels,
            depthwise: false,
            transposed: true,
        }
    }

    /// Stride-1 transposed convolution preserving H and W.
    pub fn transposed_same(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            transposed: true,
            ..Self::same(in_channels, out_channels, kernel_size)
        }
    }

    pub fn with_depthwise(mut self, depthwise: bool) -> Self {
        self.depthwise = depthwise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("conv spec {self:?}: {msg}")));
        if ![1, 3, 5].contains(&self.kernel_size) {
            return bad(format!(
                "kernel size {} not in {{1, 3, 5}}",
                self.kernel_size
            ));
        }
        if self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("stride and channel counts must be positive".into());
        }
        if self.depthwise && self.in_channels != self.out_channels {
            return bad("depthwise convolution needs in_channels == out_channels".into());
        }
        if self.stride == 1 && self.padding != (self.kernel_size - 1) / 2 {
            return bad("stride-1 convolutions use same padding".into());
        }
        if self.padding >= self.kernel_size && self.kernel_size > 1 {
            return bad("padding must be smaller than the kernel".into());
        }
        if self.output_padding > 0 && (!self.transposed || self.output_padding >= self.stride) {
            return bad(
                "output padding needs a transposed conv and must be below the stride".into(),
            );
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        if self.depthwise {
            self.in_channels
        } else {
            1
        }
    }

    /// `[out, in/groups, k, k]` for convolutions, `[in, out/groups, k, k]` for transposed ones.
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel_size;
        let g = self.groups();
        if self.transposed {
            [self.in_channels, self.out_channels / g, k, k]
        } else {
            [self.out_channels, self.in_channels / g, k, k]
        }
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let along = |len: usize, axis: &str| -> Result<usize> {
            let k = self.kernel_size;
            let (s, p) = (self.stride, self.padding);
            let out = if self.transposed {
                if len == 0 {
                    0
                } else {
                    ((len - 1) * s + k + self.output_padding).saturating_sub(2 * p)
                }
            } else if len + 2 * p < k {
                0
            } else {
                (len + 2 * p - k) / s + 1
            };
            if out == 0 {
                return Err(Error::shape(
                    "conv2d",
                    axis,
                    format!("input extent {len} yields an empty output for {self:?}"),
                ));
            }
            Ok(out)
        };
        Ok((along(h, "height")?, along(w, "width")?))
    }
}

/// Valid output indices `o` such that `o * stride + tap - pad` lands in `[0, in_len)`.
fn valid_range(
    out_len: usize,
    in_len: usize,
    tap: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > tap {
        out_len.min((in_len - 1 + pad - tap) / stride + 1)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Geometry shared by the three plane primitives: a "wide" side indexed by
/// `o * stride + tap - pad` and a "narrow" side indexed by `o`.
#[derive(Clone, Copy)]
struct Taps {
    narrow_h: usize,
    narrow_w: usize,
    wide_h: usize,
    wide_w: usize,
    stride: usize,
    pad: usize,
}

impl Taps {
    /// `narrow[o] += wide[o*s + tap - p] * wv`
    fn gather(&self, narrow: &mut [f32], wide: &[f32], wv: f32, kh: usize, kw: usize) {
        let s = self.stride;
        let (h0, h1) = valid_range(self.narrow_h, self.wide_h, kh, s, self.pad);
        let (w0, w1) = valid_range(self.narrow_w, self.wide_w, kw, s, self.pad);
        if w0 >= w1 {
            return;
        }
        for oh in h0..h1 {
            let ih = oh * s + kh - self.pad;
            let start = w0 * s + kw - self.pad;
            let row = &wide[ih * self.wide_w..(ih + 1) * self.wide_w];
            let out = &mut narrow[oh * self.narrow_w + w0..oh * self.narrow_w + w1];
            for (o, x) in out.iter_mut().zip(row[start..].iter().step_by(s)) {
                *o += *x * wv;
            }
        }
    }

    /// `wide[o*s + tap - p] += narrow[o] * wv`
    fn scatter(&self, wide: &mut [f32], narrow: &[f32], wv: f32, kh: usize, kw: usize) {
        let s = self.stride;
        let (h0, h1) = valid_range(self.narrow_h, self.wide_h, kh, s, self.pad);
        let (w0, w1) = valid_range(self.narrow_w, self.wide_w, kw, s, self.pad);
        if w0 >= w1 {
            return;
        }
        for oh in h0..h1 {
            let ih = oh * s + kh - self.pad;
            let start = w0 * s + kw - self.pad;
            let row = &mut wide[ih * self.wide_w..(ih + 1) * self.wide_w];
            let src = &narrow[oh * self.narrow_w + w0..oh * self.narrow_w + w1];
            for (x, g) in row[start..].iter_mut().step_by(s).zip(src) {
                *x += *g * wv;
            }
        }
    }

    /// `Σ_o narrow[o] * wide[o*s + tap - p]`, row-major over `o`.
    fn correlate(&self, narrow: &[f32], wide: &[f32], kh: usize, kw: usize) -> f32 {
        let s = self.stride;
        let (h0, h1) = valid_range(self.narrow_h, self.wide_h, kh, s, self.pad);
        let (w0, w1) = valid_range(self.narrow_w, self.wide_w, kw, s, self.pad);
        let mut acc = 0.0f32;
        if w0 >= w1 {
            return acc;
        }
        for oh in h0..h1 {
            let ih = oh * s + kh - self.pad;
            let start = w0 * s + kw - self.pad;
            let row = &wide[ih * self.wide_w..(ih + 1) * self.wide_w];
            let src = &narrow[oh * self.narrow_w + w0..oh * self.narrow_w + w1];
            for (g, x) in src.iter().zip(row[start..].iter().step_by(s)) {
                acc += *g * *x;
            }
        }
        acc
    }
}

/// Batch-level geometry of a kernel invocation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn taps(&self, spec: &ConvSpec) -> Taps {
        let (narrow_h, narrow_w, wide_h, wide_w) = if spec.transposed {
            (self.h, self.w, self.out_h, self.out_w)
        } else {
            (self.out_h, self.out_w, self.h, self.w)
        };
        Taps {
            narrow_h,
            narrow_w,
            wide_h,
            wide_w,
            stride: spec.stride,
            pad: spec.padding,
        }
    }
}

fn add_bias(out: &mut [f32], plane: usize, channels: usize, bias: Option<&[f32]>) {
    if let Some(bias) = bias {
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let b = bias[i % channels];
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad(dy: &[f32], plane: usize, channels: usize) -> Vec<f32> {
    let mut db = vec![0.0f32; channels];
    for (i, chunk) in dy.chunks(plane).enumerate() {
        let acc = &mut db[i % channels];
        for v in chunk {
            *acc += *v;
        }
    }
    db
}

pub(crate) fn conv2d_forward(
    x: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    spec: &ConvSpec,
    geo: ConvGeometry,
) -> Vec<f32> {
    let k = spec.kernel_size;
    let (ci, co) = (spec.in_channels, spec.out_channels);
    let g = spec.groups();
    let (in_pg, out_pg) = (ci / g, co / g);
    let taps = geo.taps(spec);
    let (in_plane, out_plane) = (geo.h * geo.w, geo.out_h * geo.out_w);
    let mut out = vec![0.0f32; geo.n * co * out_plane];
    if spec.transposed {
        for_each_plane(&mut out, out_plane, |pi, plane| {
            let (b, oc) = (pi / co, pi % co);
            let (grp, ocl) = (oc / out_pg, oc % out_pg);
            for icl in 0..in_pg {
                let ic = grp * in_pg + icl;
                let src = &x[(b * ci + ic) * in_plane..][..in_plane];
                let wbase = (ic * out_pg + ocl) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        taps.scatter(plane, src, weight[wbase + kh * k + kw], kh, kw);
                    }
                }
            }
        });
    } else {
        for_each_plane(&mut out, out_plane, |pi, plane| {
            let (b, oc) = (pi / co, pi % co);
            let grp = oc / out_pg;
            for icl in 0..in_pg {
                let ic = grp * in_pg + icl;
                let src = &x[(b * ci + ic) * in_plane..][..in_plane];
                let wbase = (oc * in_pg + icl) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        taps.gather(plane, src, weight[wbase + kh * k + kw], kh, kw);
                    }
                }
            }
        });
    }
    add_bias(&mut out, out_plane, co, bias);
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Vec<f32>,
}

pub(crate) fn conv2d_backward(
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    spec: &ConvSpec,
    geo: ConvGeometry,
    need_input: bool,
    need_weight: bool,
) -> ConvGrads {
    let k = spec.kernel_size;
    let (ci, co) = (spec.in_channels, spec.out_channels);
    let g = spec.groups();
    let (in_pg, out_pg) = (ci / g, co / g);
    let taps = geo.taps(spec);
    let (in_plane, out_plane) = (geo.h * geo.w, geo.out_h * geo.out_w);

    let input = need_input.then(|| {
        let mut dx = vec![0.0f32; geo.n * ci * in_plane];
        for_each_plane(&mut dx, in_plane, |pi, plane| {
            let (b, ic) = (pi / ci, pi % ci);
            let (grp, icl) = (ic / in_pg, ic % in_pg);
            for ocl in 0..out_pg {
                let oc = grp * out_pg + ocl;
                let grad = &dy[(b * co + oc) * out_plane..][..out_plane];
                let wbase = if spec.transposed {
                    (ic * out_pg + ocl) * k * k
                } else {
                    (oc * in_pg + icl) * k * k
                };
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = weight[wbase + kh * k + kw];
                        if spec.transposed {
                            taps.gather(plane, grad, wv, kh, kw);
                        } else {
                            taps.scatter(plane, grad, wv, kh, kw);
                        }
                    }
                }
            }
        });
        dx
    });

    let weight_grad = need_weight.then(|| {
        let mut dw = vec![0.0f32; spec.weight_numel()];
        if spec.transposed {
            // dw[ic][ocl][kh][kw]
            for_each_plane(&mut dw, out_pg * k * k, |ic, plane| {
                let grp = ic / in_pg;
                for ocl in 0..out_pg {
                    let oc = grp * out_pg + ocl;
                    for kh in 0..k {
                        for kw in 0..k {
                            let mut acc = 0.0f32;
                            for b in 0..geo.n {
                                let src = &x[(b * ci + ic) * in_plane..][..in_plane];
                                let grad = &dy[(b * co + oc) * out_plane..][..out_plane];
                                acc += taps.correlate(src, grad, kh, kw);
                            }
                            plane[(ocl * k + kh) * k + kw] = acc;
                        }
                    }
                }
            });
        } else {
            // dw[oc][icl][kh][kw]
            for_each_plane(&mut dw, in_pg * k * k, |oc, plane| {
                let grp = oc / out_pg;
                for icl in 0..in_pg {
                    let ic = grp * in_pg + icl;
                    for kh in 0..k {
                        for kw in 0..k {
                            let mut acc = 0.0f32;
                            for b in 0..geo.n {
                                let src = &x[(b * ci + ic) * in_plane..][..in_plane];
                                let grad = &dy[(b * co + oc) * out_plane..][..out_plane];
                                acc += taps.correlate(grad, src, kh, kw);
                            }
                            plane[(icl * k + kh) * k + kw] = acc;
                        }
                    }
                }
            });
        }
        dw
    });

    ConvGrads {
        input,
        weight: weight_grad,
        bias: bias_grad(dy, out_plane, co),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_handles_padding_and_stride() {
        // 4-wide input, k=3, pad 1, stride 2 -> outputs 0..2; tap 0 needs o*2-1 >= 0.
        assert_eq!(valid_range(2, 4, 0, 2, 1), (1, 2));
        assert_eq!(valid_range(2, 4, 1, 2, 1), (0, 2));
        assert_eq!(valid_range(2, 4, 2, 2, 1), (0, 2));
        assert_eq!(valid_range(3, 3, 0, 1, 1), (1, 3));
        assert_eq!(valid_range(3, 3, 2, 1, 1), (0, 2));
    }

    #[test]
    fn output_sizes() {
        assert_eq!(ConvSpec::same(1, 1, 5).output_size(7, 9).unwrap(), (7, 9));
        assert_eq!(
            ConvSpec::strided(1, 1, 3, 2).output_size(8, 6).unwrap(),
            (4, 3)
        );
        assert_eq!(ConvSpec::upsample(4, 2).output_size(5, 3).unwrap(), (10, 6));
        assert_eq!(
            ConvSpec::transposed_same(2, 2, 5)
                .output_size(4, 4)
                .unwrap(),
            (4, 4)
        );
        let mut s = ConvSpec::same(1, 1, 3);
        s.padding = 0;
        assert!(s.output_size(2, 2).is_err());
    }

    #[test]
    fn validate_rejects_bad_specs() {
        assert!(ConvSpec::same(2, 3, 7).validate().is_err());
        assert!(ConvSpec::depthwise(3, 3).validate().is_ok());
        let mut dw = ConvSpec::depthwise(3, 3);
        dw.out_channels = 4;
        assert!(dw.validate().is_err());
        let mut s = ConvSpec::same(1, 1, 3);
        s.padding = 0;
        assert!(s.validate().is_err());
        let mut u = ConvSpec::upsample(1, 1);
        u.output_padding = 2;
        assert!(u.validate().is_err());
    }

    #[test]
    fn weight_shapes() {
        assert_eq!(ConvSpec::same(3, 8, 3).weight_shape(), [8, 3, 3, 3]);
        assert_eq!(ConvSpec::depthwise(8, 5).weight_shape(), [8, 1, 5, 5]);
        assert_eq!(ConvSpec::upsample(32, 16).weight_shape(), [32, 16, 3, 3]);
    }
}
