//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's kernels; each routine is the
//! textbook loop nest, kept deliberately plain.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Plain cross-correlation. `weight` is `[co, ci/groups, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    weight: &[f32],
    bias: Option<&[f32]>,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f32>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let (in_pg, out_pg) = (ci / groups, co / groups);
    let mut out = vec![0.0f32; n * co * ho * wo];
    for b in 0..n {
        for oc in 0..co {
            let g = oc / out_pg;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0f32;
                    for icl in 0..in_pg {
                        let ic = g * in_pg + icl;
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = (oh * stride + kh) as isize - pad as isize;
                                let iw = (ow * stride + kw) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * ci + ic) * h + ih as usize) * w + iw as usize];
                                let wv = weight[((oc * in_pg + icl) * k + kh) * k + kw];
                                acc += xv * wv;
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias[oc];
                    }
                    out[((b * co + oc) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

/// Transposed convolution by scatter-accumulate. `weight` is `[ci, co/groups, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_deconv(
    x: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    weight: &[f32],
    bias: Option<&[f32]>,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
    groups: usize,
) -> (Vec<f32>, usize, usize) {
    let ho = (h - 1) * stride + k + output_padding - 2 * pad;
    let wo = (w - 1) * stride + k + output_padding - 2 * pad;
    let (in_pg, out_pg) = (ci / groups, co / groups);
    let mut out = vec![0.0f32; n * co * ho * wo];
    for b in 0..n {
        for oc in 0..co {
            let g = oc / out_pg;
            let ocl = oc % out_pg;
            for icl in 0..in_pg {
                let ic = g * in_pg + icl;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = weight[((ic * out_pg + ocl) * k + kh) * k + kw];
                        for ih in 0..h {
                            for iw in 0..w {
                                let y = (ih * stride + kh) as isize - pad as isize;
                                let z = (iw * stride + kw) as isize - pad as isize;
                                if y < 0 || z < 0 || y >= ho as isize || z >= wo as isize {
                                    continue;
                                }
                                out[((b * co + oc) * ho + y as usize) * wo + z as usize] +=
                                    x[((b * ci + ic) * h + ih) * w + iw] * wv;
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                for v in &mut out[(b * co + oc) * ho * wo..][..ho * wo] {
                    *v += bias[oc];
                }
            }
        }
    }
    (out, ho, wo)
}

/// Train-mode batch norm: biased batch variance, eps 1e-5.
pub fn naive_bn_train(
    x: &[f32],
    (n, c, hw): (usize, usize, usize),
    gamma: &[f32],
    beta: &[f32],
) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    let count = (n * hw) as f64;
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            for i in 0..hw {
                s += x[(b * c + ch) * hw + i] as f64;
            }
        }
        let mean = s / count;
        let mut q = 0.0f64;
        for b in 0..n {
            for i in 0..hw {
                let d = x[(b * c + ch) * hw + i] as f64 - mean;
                q += d * d;
            }
        }
        let var = q / count;
        let inv = (1.0 / (var + 1e-5).sqrt()) as f32;
        let m = mean as f32;
        for b in 0..n {
            for i in 0..hw {
                let idx = (b * c + ch) * hw + i;
                out[idx] = (x[idx] - m) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

pub fn naive_bn_eval(
    x: &[f32],
    (n, c, hw): (usize, usize, usize),
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let inv = (1.0 / (var[ch] as f64 + 1e-5).sqrt()) as f32;
            for i in 0..hw {
                let idx = (b * c + ch) * hw + i;
                out[idx] = (x[idx] - mean[ch]) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

pub fn relu(v: &[f32]) -> Vec<f32> {
    v.iter().map(|x| if *x > 0.0 { *x } else { 0.0 }).collect()
}

pub fn add(a: &[f32], b: &[f32]) -> Vec<f32> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Soft Dice loss of one image, straight from the formula.
pub fn oracle_dice(p: &[f64], t: &[f64], eps: f64) -> f64 {
    let i: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let sp: f64 = p.iter().sum();
    let st: f64 = t.iter().sum();
    1.0 - (2.0 * i + eps) / (sp + st + eps)
}

pub fn oracle_jaccard(p: &[f64], t: &[f64], eps: f64) -> f64 {
    let i: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let sp: f64 = p.iter().sum();
    let st: f64 = t.iter().sum();
    1.0 - (i + eps) / (sp + st - i + eps)
}

pub fn oracle_bce(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(t)
        .map(|(p, y)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Trainable and non-trainable parameter totals, counted from the layer list.
pub mod param_count {
    fn conv(ci: usize, co: usize, k: usize, groups: usize) -> usize {
        co * (ci / groups) * k * k + co
    }

    fn multiscale(c: usize, k: usize, depthwise: bool, r: usize) -> usize {
        if !depthwise {
            return conv(c, c, k, 1);
        }
        let pointwise = if r == 1 {
            conv(c, c, 1, 1)
        } else {
            conv(c, c / r, 1, 1) + conv(c / r, c, 1, 1)
        };
        conv(c, c, k, c) + pointwise
    }

    /// `(trainable, non_trainable)` of one block.
    pub fn block(c: usize, depthwise: bool, r: usize) -> (usize, usize) {
        let convs = 2 * (multiscale(c, 3, depthwise, r) + multiscale(c, 5, depthwise, r))
            + 2 * conv(c, c, 1, 1);
        (convs + 6 * 2 * c, 6 * 2 * c)
    }

    pub fn model(c_in: usize, c: usize, depthwise: bool, r: usize) -> (usize, usize) {
        let mut t = conv(c_in, c, 3, 1) + 2 * c;
        let mut n = 2 * c;
        for (width, extra) in [
            (c, conv(c, 2 * c, 3, 1)),
            (2 * c, conv(2 * c, 4 * c, 3, 1)),
            (4 * c, 0),
            (2 * c, 4 * c * 2 * c * 9 + 2 * c),
            (c, 2 * c * c * 9 + c),
        ] {
            let (bt, bn) = block(width, depthwise, r);
            t += bt + extra;
            n += bn;
        }
        t += conv(c, c_in, 1, 1) + 2 * c_in + conv(c_in, 1, 1, 1);
        n += 2 * c_in;
        (t, n)
    }
}
