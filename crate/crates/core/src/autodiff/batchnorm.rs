//! Per-channel batch normalization kernels.
//!
//! Statistics are accumulated in `f64` in `(n, h, w)` order; the per-element
//! normalization itself runs in `f32`.

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

/// Statistics of one train-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f32>,
    /// Values per channel (`n * h * w`).
    pub count: usize,
}

/// Running mean and variance tracked across training batches.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`, using the
    /// unbiased batch variance.
    pub fn update(&mut self, batch: &BatchStats) {
        update_running(&mut self.mean, &mut self.var, batch);
    }
}

pub(crate) fn update_running(mean: &mut [f32], var: &mut [f32], batch: &BatchStats) {
    let m = batch.count as f32;
    let correction = if batch.count > 1 { m / (m - 1.0) } else { 1.0 };
    for c in 0..mean.len() {
        mean[c] = BN_MOMENTUM * mean[c] + (1.0 - BN_MOMENTUM) * batch.mean[c];
        var[c] = BN_MOMENTUM * var[c] + (1.0 - BN_MOMENTUM) * batch.var[c] * correction;
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BnDims {
    pub n: usize,
    pub c: usize,
    pub hw: usize,
}

fn channel_values(x: &[f32], d: BnDims, c: usize) -> impl Iterator<Item = &f32> {
    (0..d.n).flat_map(move |b| x[(b * d.c + c) * d.hw..][..d.hw].iter())
}

pub(crate) struct BnForward {
    pub y: Vec<f32>,
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

fn normalize(
    x: &[f32],
    d: BnDims,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    inv_std: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0f32; x.len()];
    let mut xhat = vec![0.0f32; x.len()];
    for b in 0..d.n {
        for c in 0..d.c {
            let base = (b * d.c + c) * d.hw;
            let (m, s, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for i in base..base + d.hw {
                let xh = (x[i] - m) * s;
                xhat[i] = xh;
                y[i] = xh * g + bt;
            }
        }
    }
    (y, xhat)
}

pub(crate) fn bn_train_forward(
    x: &[f32],
    d: BnDims,
    gamma: &[f32],
    beta: &[f32],
) -> (BnForward, BatchStats) {
    let count = d.n * d.hw;
    let mut mean = vec![0.0f32; d.c];
    let mut var = vec![0.0f32; d.c];
    let mut inv_std = vec![0.0f32; d.c];
    for c in 0..d.c {
        let mut sum = 0.0f64;
        for v in channel_values(x, d, c) {
            sum += *v as f64;
        }
        let mu = sum / count as f64;
        let mut sq = 0.0f64;
        for v in channel_values(x, d, c) {
            let dv = *v as f64 - mu;
            sq += dv * dv;
        }
        let sigma2 = sq / count as f64;
        mean[c] = mu as f32;
        var[c] = sigma2 as f32;
        inv_std[c] = (1.0 / (sigma2 + BN_EPS).sqrt()) as f32;
    }
    let (y, xhat) = normalize(x, d, gamma, beta, &mean, &inv_std);
    (
        BnForward { y, xhat, inv_std },
        BatchStats { mean, var, count },
    )
}

pub(crate) fn bn_eval_forward(
    x: &[f32],
    d: BnDims,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> BnForward {
    let inv_std: Vec<f32> = running_var
        .iter()
        .map(|v| (1.0 / (*v as f64 + BN_EPS).sqrt()) as f32)
        .collect();
    let (y, xhat) = normalize(x, d, gamma, beta, running_mean, &inv_std);
    BnForward { y, xhat, inv_std }
}

pub(crate) struct BnGrads {
    pub input: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

pub(crate) fn bn_backward(
    dy: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    d: BnDims,
    train: bool,
) -> BnGrads {
    let m = (d.n * d.hw) as f64;
    let mut dgamma = vec![0.0f32; d.c];
    let mut dbeta = vec![0.0f32; d.c];
    let mut dx = vec![0.0f32; dy.len()];
    for c in 0..d.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..d.n {
            let base = (b * d.c + c) * d.hw;
            for i in base..base + d.hw {
                sum_dy += dy[i] as f64;
                sum_dy_xhat += dy[i] as f64 * xhat[i] as f64;
            }
        }
        dgamma[c] = sum_dy_xhat as f32;
        dbeta[c] = sum_dy as f32;
        let scale = gamma[c] * inv_std[c];
        let mean_dy = (sum_dy / m) as f32;
        let mean_dy_xhat = (sum_dy_xhat / m) as f32;
        for b in 0..d.n {
            let base = (b * d.c + c) * d.hw;
            for i in base..base + d.hw {
                dx[i] = if train {
                    scale * (dy[i] - mean_dy - xhat[i] * mean_dy_xhat)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}
