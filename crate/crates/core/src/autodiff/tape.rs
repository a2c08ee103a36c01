//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations are
//! appended in execution order, so replaying the record back to front visits
//! each operation once, after all of its consumers.

use crate::autodiff::batchnorm::{self, BatchStats, BnDims};
use crate::autodiff::conv::{self, ConvGeometry, ConvSpec};
use crate::autodiff::tensor::{image_dims, image_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operator defined outside this module.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input, given the gradient of the output.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f32],
    ) -> Vec<Option<Vec<f32>>>;
}

/// Normalization source for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen running statistics.
    Eval { mean: &'a [f32], var: &'a [f32] },
}

enum Op {
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward context.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input; it participates in differentiation if the tensor
    /// is flagged `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = self.grad_enabled && tensor.requires_grad();
        self.push(tensor, requires_grad, None)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), false, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Option<Op>) -> Var {
        let op = if requires_grad { op } else { None };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Convolution or transposed convolution, depending on `spec.transposed`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        spec.validate()?;
        let xs = self.value(x).shape().to_vec();
        let (n, c, h, wd) = image_dims("conv2d", &xs)?;
        if c != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                "input channels",
                format!("spec expects {}, input has {c}", spec.in_channels),
            ));
        }
        let ws = self.value(w).shape();
        if ws != spec.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                "weight",
                format!("expected {:?}, got {ws:?}", spec.weight_shape()),
            ));
        }
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [spec.out_channels] {
                return Err(Error::shape(
                    "conv2d",
                    "bias",
                    format!("expected [{}], got {bs:?}", spec.out_channels),
                ));
            }
        }
        let (out_h, out_w) = spec.output_size(h, wd)?;
        let geo = ConvGeometry {
            n,
            h,
            w: wd,
            out_h,
            out_w,
        };
        let out = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            spec,
            geo,
        );
        let value = Tensor::new(image_shape(&xs, n, spec.out_channels, out_h, out_w), out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            value,
            rg,
            Some(Op::Conv {
                x,
                w,
                b,
                spec: *spec,
            }),
        ))
    }

    /// Transposed convolution whose output is either the same size as its
    /// input (stride 1) or exactly twice as large (stride 2).
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        if !spec.transposed {
            return Err(Error::invalid("deconv2d needs a transposed conv spec"));
        }
        let (_, _, h, wd) = image_dims("deconv2d", self.value(x).shape())?;
        let (oh, ow) = spec.output_size(h, wd)?;
        let factor = spec.stride;
        if factor > 2 || oh != h * factor || ow != wd * factor {
            return Err(Error::invalid(format!(
                "deconv2d spec {spec:?} maps {h}×{wd} to {oh}×{ow}; expected an exact ×1 or ×2 resize"
            )));
        }
        self.conv2d(x, w, b, spec)
    }

    /// Per-channel batch normalization. In train mode the batch statistics
    /// are returned so the caller can fold them into its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, h, w) = image_dims("batch_norm", &xs)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    "channels",
                    format!(
                        "{name} has shape {:?}, input has {c} channels",
                        self.value(v).shape()
                    ),
                ));
            }
        }
        let d = BnDims { n, c, hw: h * w };
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let (fwd, stats, train) = match mode {
            BnMode::Train => {
                if n * h * w < 2 {
                    return Err(Error::shape(
                        "batch_norm",
                        "batch·H·W",
                        format!("train mode needs at least 2 values per channel, input is {xs:?}"),
                    ));
                }
                let (fwd, stats) = batchnorm::bn_train_forward(self.value(x).data(), d, g, bt);
                (fwd, Some(stats), true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm",
                        "running statistics",
                        format!("{} / {} entries for {c} channels", mean.len(), var.len()),
                    ));
                }
                (
                    batchnorm::bn_eval_forward(self.value(x).data(), d, g, bt, mean, var),
                    None,
                    false,
                )
            }
        };
        let value = Tensor::new(xs, fwd.y)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: fwd.xhat,
            inv_std: fwd.inv_std,
            train,
        };
        Ok((self.push(value, rg, Some(op)), stats))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|v| f(*v)).collect(),
        )
        .expect("elementwise op preserves shape");
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Some(op))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("add", "operands", format!("{sa:?} vs {sb:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Some(Op::Add(a, b))))
    }

    /// Sums several same-shaped values left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("add_all needs at least one term"))?;
        rest.iter().try_fold(*first, |acc, t| self.add(acc, *t))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| *v as f64).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(total as f32), rg, Some(Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let total: f64 = t.data().iter().map(|v| *v as f64).sum();
        let mean = if t.numel() == 0 {
            0.0
        } else {
            total / t.numel() as f64
        };
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(mean as f32), rg, Some(Op::Mean(x)))
    }

    /// Records a value computed outside the tape along with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            output,
            rg,
            Some(Op::Custom {
                inputs: inputs.to_vec(),
                op,
            }),
        )
    }

    /// Propagates `d loss / d v` to every recorded value that requires a
    /// gradient. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                "loss",
                format!("expected a scalar, got shape {:?}", loss_node.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        let mut leaf_grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if loss_node.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                leaf_grads[i] = Some(g);
                continue;
            };
            for (var, grad) in self.op_backward(op, &node.value, &g) {
                self.accumulate(&mut grads, var, grad);
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
            slot @ None => *slot = Some(g),
        }
    }

    fn op_backward(&self, op: &Op, out: &Tensor, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        match op {
            Op::Conv { x, w, b, spec } => {
                let xv = self.value(*x);
                let (n, _, h, wd) = image_dims("conv2d", xv.shape()).expect("validated in forward");
                let (_, _, out_h, out_w) =
                    image_dims("conv2d", out.shape()).expect("validated in forward");
                let geo = ConvGeometry {
                    n,
                    h,
                    w: wd,
                    out_h,
                    out_w,
                };
                let grads = conv::conv2d_backward(
                    xv.data(),
                    self.value(*w).data(),
                    g,
                    spec,
                    geo,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                );
                let mut res = Vec::with_capacity(3);
                if let Some(dx) = grads.input {
                    res.push((*x, dx));
                }
                if let Some(dw) = grads.weight {
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    res.push((*b, grads.bias));
                }
                res
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) =
                    image_dims("batch_norm", out.shape()).expect("validated in forward");
                let d = BnDims { n, c, hw: h * w };
                let gr =
                    batchnorm::bn_backward(g, xhat, inv_std, self.value(*gamma).data(), d, *train);
                vec![(*x, gr.input), (*gamma, gr.gamma), (*beta, gr.beta)]
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Sigmoid(x) => {
                let dx = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(s, g)| g * s * (1.0 - s))
                    .collect();
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1);
                vec![(*x, vec![g[0] / n as f32; n])]
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = op.backward(&values, out, g);
                inputs
                    .iter()
                    .zip(grads)
                    .filter_map(|(v, g)| g.map(|g| (*v, g)))
                    .collect()
            }
        }
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradients of the leaves of a finished backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Writes the gradient of `v` into `tensor.grad`, or zeros if `v`
    /// received none.
    pub fn write_into(&mut self, v: Var, tensor: &mut Tensor) -> Result<()> {
        let g = self.take(v).unwrap_or_else(|| vec![0.0; tensor.numel()]);
        tensor.set_grad(g)
    }
}
