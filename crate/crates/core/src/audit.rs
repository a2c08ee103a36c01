//! Finite-difference audit of every differentiable operator and of the full
//! model, shared by the command line and the test suites.

use rand::Rng;

use crate::architecture::{
    BlockConfig, DmresBlock, MiniNet, Mode, ModelConfig, ParamBuilder, Session,
};
use crate::autodiff::{
    grad_check, BnMode, ConvSpec, GradCheckOptions, GradCheckReport, Tape, Tensor, Var,
};
use crate::error::Result;
use crate::objectives::losses::tape as loss_tape;
use crate::objectives::{DiceForm, LossSpec};
use crate::seed;

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so kinks stay outside the difference step.
fn off_zero(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn binary(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |i| {
        if i % 3 == 0 || rng.random_bool(0.3) {
            1.0
        } else {
            0.0
        }
    })
}

fn conv_case(
    name: &str,
    spec: ConvSpec,
    x_shape: [usize; 4],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = seed::stream(0, name);
    let x = uniform(&mut rng, x_shape.to_vec(), -1.0, 1.0).with_requires_grad(true);
    let w = uniform(&mut rng, spec.weight_shape().to_vec(), -0.5, 0.5).with_requires_grad(true);
    let b = uniform(&mut rng, vec![spec.out_channels], -0.5, 0.5).with_requires_grad(true);
    grad_check(
        name,
        &[("input", x), ("weight", w), ("bias", b)],
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), &spec),
        opts,
    )
}

/// Operator-level checks: convolution variants, batch norm, pointwise ops
/// and the losses.
pub fn operator_suite(tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let opts = GradCheckOptions::with_tolerance(tolerance);
    let mut reports = vec![
        conv_case("conv2d k1", ConvSpec::same(3, 2, 1), [2, 3, 4, 4], opts)?,
        conv_case("conv2d k3", ConvSpec::same(2, 3, 3), [2, 2, 5, 5], opts)?,
        conv_case("conv2d k5", ConvSpec::same(2, 2, 5), [1, 2, 6, 6], opts)?,
        conv_case(
            "conv2d k3 stride2",
            ConvSpec::strided(2, 4, 3, 2),
            [2, 2, 6, 6],
            opts,
        )?,
        conv_case(
            "conv2d depthwise k3",
            ConvSpec::depthwise(3, 3),
            [2, 3, 5, 5],
            opts,
        )?,
        conv_case(
            "conv2d depthwise k5",
            ConvSpec::depthwise(2, 5),
            [1, 2, 6, 6],
            opts,
        )?,
        conv_case(
            "deconv2d upsample",
            ConvSpec::upsample(3, 2),
            [2, 3, 3, 3],
            opts,
        )?,
        conv_case(
            "deconv2d k5 same",
            ConvSpec::transposed_same(2, 3, 5),
            [1, 2, 5, 5],
            opts,
        )?,
        conv_case(
            "deconv2d depthwise k3",
            ConvSpec::transposed_same(3, 3, 3).with_depthwise(true),
            [2, 3, 4, 4],
            opts,
        )?,
    ];

    let mut rng = seed::stream(0, "batch_norm");
    let x = uniform(&mut rng, vec![2, 3, 3, 3], -2.0, 2.0).with_requires_grad(true);
    let gamma = uniform(&mut rng, vec![3], 0.5, 1.5).with_requires_grad(true);
    let beta = uniform(&mut rng, vec![3], -0.5, 0.5).with_requires_grad(true);
    reports.push(grad_check(
        "batch_norm train",
        &[
            ("input", x.clone()),
            ("gamma", gamma.clone()),
            ("beta", beta.clone()),
        ],
        |t, v| Ok(t.batch_norm(v[0], v[1], v[2], BnMode::Train)?.0),
        opts,
    )?);
    let (mean, var) = ([0.1f32, -0.2, 0.3], [0.5f32, 1.5, 2.0]);
    reports.push(grad_check(
        "batch_norm eval",
        &[("input", x), ("gamma", gamma), ("beta", beta)],
        |t, v| {
            let mode = BnMode::Eval {
                mean: &mean,
                var: &var,
            };
            Ok(t.batch_norm(v[0], v[1], v[2], mode)?.0)
        },
        opts,
    )?);

    let mut rng = seed::stream(0, "pointwise");
    let a = off_zero(&mut rng, vec![2, 2, 3, 3]).with_requires_grad(true);
    let b = off_zero(&mut rng, vec![2, 2, 3, 3]).with_requires_grad(true);
    reports.push(grad_check(
        "relu",
        &[("input", a.clone())],
        |t, v| Ok(t.relu(v[0])),
        opts,
    )?);
    reports.push(grad_check(
        "sigmoid",
        &[("input", a.clone())],
        |t, v| Ok(t.sigmoid(v[0])),
        opts,
    )?);
    reports.push(grad_check(
        "add",
        &[("lhs", a.clone()), ("rhs", b)],
        |t, v| t.add(v[0], v[1]),
        opts,
    )?);
    reports.push(grad_check(
        "scale",
        &[("input", a.clone())],
        |t, v| Ok(t.scale(v[0], -1.7)),
        opts,
    )?);
    reports.push(grad_check(
        "mean",
        &[("input", a)],
        |t, v| Ok(t.mean(v[0])),
        opts,
    )?);

    let mut rng = seed::stream(0, "losses");
    let p = uniform(&mut rng, vec![2, 1, 4, 4], 0.05, 0.95).with_requires_grad(true);
    let y = binary(&mut rng, vec![2, 1, 4, 4]);
    let pred = [("pred", p)];
    reports.push(grad_check(
        "dice_loss",
        &pred,
        |t, v| loss_tape::dice(t, v[0], &y, 1.0, DiceForm::Standard),
        opts,
    )?);
    reports.push(grad_check(
        "dice_loss literal",
        &pred,
        |t, v| loss_tape::dice(t, v[0], &y, 1.0, DiceForm::Literal),
        opts,
    )?);
    reports.push(grad_check(
        "jaccard_loss",
        &pred,
        |t, v| loss_tape::jaccard(t, v[0], &y, 1.0),
        opts,
    )?);
    reports.push(grad_check(
        "bce_loss",
        &pred,
        |t, v| loss_tape::bce(t, v[0], &y),
        opts,
    )?);
    reports.push(grad_check(
        "total_loss",
        &pred,
        |t, v| loss_tape::total(t, v[0], &y, &LossSpec::default(), 3),
        opts,
    )?);
    Ok(reports)
}

/// Runs `f` inside a train-mode session on `tape`, with each bound
/// parameter read from its tape variable instead of `store`.
fn with_session<T>(
    store: &crate::architecture::ParamStore,
    tape: &mut Tape,
    bindings: &[(crate::architecture::ParamId, Var)],
    f: impl FnOnce(&mut Session) -> Result<T>,
) -> Result<T> {
    let mut s = Session::new(store, Mode::Train, std::mem::take(tape));
    for (id, v) in bindings {
        s.bind(*id, *v);
    }
    let out = f(&mut s);
    *tape = s.finish().tape;
    out
}

/// Conv biases whose output reaches a train-mode batch norm only through
/// per-channel linear maps. Their gradient is identically zero, so they are
/// left out of difference checks.
pub fn bias_cancelled_by_norm(name: &str) -> bool {
    name.ends_with(".bias")
        && !["down.bias", "up.bias", "classifier.bias"]
            .iter()
            .any(|s| name.ends_with(s))
}

fn network_opts(tolerance: f64, max_entries: Option<usize>) -> GradCheckOptions {
    GradCheckOptions {
        max_entries,
        min_step: Some(1.25e-4),
        ..GradCheckOptions::with_tolerance(tolerance)
    }
}

/// A single train-mode DMRes block.
pub fn block_check(tolerance: f64) -> Result<GradCheckReport> {
    let mut b = ParamBuilder::new(5);
    let block = DmresBlock::build(&mut b, "dmres", 2, true, BlockConfig::default())?;
    let store = b.finish();
    let mut rng = seed::stream(0, "block");
    let x = uniform(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0).with_requires_grad(true);
    let ids: Vec<_> = store.trainable().collect();
    let mut inputs = vec![("input".to_string(), x)];
    for id in &ids {
        let p = store.get(*id);
        let checked = !bias_cancelled_by_norm(&p.name);
        inputs.push((p.name.clone(), p.tensor.clone().with_requires_grad(checked)));
    }
    let named: Vec<(&str, Tensor)> = inputs
        .iter()
        .map(|(n, t)| (n.as_str(), t.clone()))
        .collect();
    grad_check(
        "dmres block",
        &named,
        |t, v| {
            let bindings: Vec<_> = ids.iter().copied().zip(v[1..].iter().copied()).collect();
            with_session(&store, t, &bindings, |s| block.forward(s, v[0]))
        },
        GradCheckOptions {
            max_entries: Some(8),
            ..GradCheckOptions::with_tolerance(tolerance)
        },
    )
}

/// End-to-end check of `dice_loss(model(x), y)` in train mode on a 3×8×8
/// input with respect to the stem weight, whose gradient passes back through
/// every layer of the network.
pub fn model_check(tolerance: f64) -> Result<GradCheckReport> {
    let model = MiniNet::new(ModelConfig {
        seed: 11,
        ..ModelConfig::default()
    })?;
    let store = model.store();
    let mut rng = seed::stream(0, "model");
    let x = uniform(&mut rng, vec![1, 3, 8, 8], 0.0, 1.0);
    let y = binary(&mut rng, vec![1, 1, 8, 8]);
    let ids: Vec<_> = store.trainable().collect();
    let stem = model.stem.weight;
    let mut named: Vec<(&str, Tensor)> = vec![("input", x)];
    for id in &ids {
        let p = store.get(*id);
        named.push((
            p.name.as_str(),
            p.tensor.clone().with_requires_grad(*id == stem),
        ));
    }
    grad_check(
        "mini_net",
        &named,
        |t, v| {
            let bindings: Vec<_> = ids.iter().copied().zip(v[1..].iter().copied()).collect();
            with_session(store, t, &bindings, |s| {
                let pred = model.forward(s, v[0])?;
                loss_tape::dice(&mut s.tape, pred, &y, 1.0, DiceForm::Standard)
            })
        },
        network_opts(tolerance, None),
    )
}

/// Operators, one block and the full model.
pub fn full_suite(tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut reports = operator_suite(tolerance)?;
    reports.push(block_check(tolerance)?);
    reports.push(model_check(tolerance)?);
    Ok(reports)
}
