//! Finite-difference audit of tape gradients.
//!
//! The operator under test may return a value of any shape; the harness
//! reduces it to a scalar with fixed pseudo-random positive weights so every
//! output element contributes. Each checked input is perturbed entry by entry
//! with central differences, and the analytic and numeric gradients are
//! compared by norm-relative error
//! `‖g_analytic − g_numeric‖₂ / max(‖g_analytic‖₂, ‖g_numeric‖₂, floor)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tape::{CustomOp, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f32,
    /// When set, the step is halved per entry down to this size until two
    /// successive estimates agree, so a kink inside the first interval does
    /// not masquerade as a gradient error.
    pub min_step: Option<f32>,
    pub tolerance: f64,
    /// Check at most this many entries per input (evenly spaced); `None` checks all.
    pub max_entries: Option<usize>,
    /// Lower bound of the relative-error denominator, per checked entry.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            min_step: None,
            tolerance: 1e-2,
            max_entries: None,
            floor: 1e-3,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.rel_err <= self.tolerance && t.rel_err.is_finite())
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<28} {:<14} {:>7} {:>12.3e} {:>10.1e}  {}",
                self.op,
                t.name,
                t.entries,
                t.rel_err,
                self.tolerance,
                if t.rel_err <= self.tolerance {
                    "pass"
                } else {
                    "FAIL"
                }
            )?;
        }
        Ok(())
    }
}

pub fn report_header() -> String {
    format!(
        "{:<28} {:<14} {:>7} {:>12} {:>10}  {}",
        "operator", "input", "entries", "rel_err", "tol", "result"
    )
}

struct WeightedSum {
    weights: Vec<f32>,
}

impl CustomOp for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad_output: &[f32],
    ) -> Vec<Option<Vec<f32>>> {
        vec![Some(
            self.weights.iter().map(|w| w * grad_output[0]).collect(),
        )]
    }
}

fn reduction_weights(n: usize) -> Vec<f32> {
    if n == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    (0..n).map(|_| rng.random_range(0.5f32..1.5)).collect()
}

fn weighted_value(values: &[f32], weights: &[f32]) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(v, w)| *v as f64 * *w as f64)
        .sum()
}

/// Central difference at the configured step, halved toward `min_step`
/// until two successive estimates agree.
fn settle(central: &mut impl FnMut(f32) -> Result<f64>, opts: &GradCheckOptions) -> Result<f64> {
    let mut step = opts.step;
    let mut numeric = central(step)?;
    if let Some(min_step) = opts.min_step {
        while step / 2.0 >= min_step {
            step /= 2.0;
            let next = central(step)?;
            let scale = next.abs().max(numeric.abs()).max(opts.floor);
            let settled = (next - numeric).abs() <= 0.25 * opts.tolerance * scale;
            numeric = next;
            if settled {
                break;
            }
        }
    }
    Ok(numeric)
}

/// Checks the gradient of `op` with respect to every input flagged
/// `requires_grad`.
pub fn grad_check<F>(
    name: &str,
    inputs: &[(&str, Tensor)],
    op: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (analytic, weights) = analytic_gradients(inputs, &op)?;
    let evaluate = |perturbed: &[Tensor]| evaluate_weighted(perturbed, &op, &weights);

    let mut tensors = Vec::new();
    let mut work: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    for (idx, (label, input)) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = &analytic[idx];
        let n = input.numel();
        let stride = match opts.max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut diff2 = 0.0f64;
        let mut a2 = 0.0f64;
        let mut n2 = 0.0f64;
        let mut entries = 0usize;
        for i in (0..n).step_by(stride) {
            let orig = input.data()[i];
            let mut at = |offset: f32| -> Result<(f64, f64)> {
                let shifted = orig + offset;
                work[idx].data_mut()[i] = shifted;
                let v = evaluate(&work)?;
                // Difference quotients use the perturbation actually realized in f32.
                Ok((v, shifted as f64 - orig as f64))
            };
            let mut central = |step: f32| -> Result<f64> {
                let (plus, hp) = at(step)?;
                let (minus, hm) = at(-step)?;
                Ok((plus - minus) / (hp - hm))
            };
            let numeric = settle(&mut central, &opts)?;
            work[idx].data_mut()[i] = orig;
            let a = analytic[i] as f64;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            entries += 1;
        }
        let floor = opts.floor * (entries as f64).sqrt();
        let denom = a2.sqrt().max(n2.sqrt()).max(floor);
        tensors.push(TensorCheck {
            name: label.to_string(),
            entries,
            rel_err: diff2.sqrt() / denom,
        });
    }
    Ok(GradCheckReport {
        op: name.to_string(),
        tolerance: opts.tolerance,
        tensors,
    })
}

/// Gradient of the weighted output sum with respect to every input, zeros
/// for inputs that do not require one.
fn analytic_gradients<F>(inputs: &[(&str, Tensor)], op: &F) -> Result<(Vec<Vec<f32>>, Vec<f32>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    let weights = reduction_weights(tape.value(out).numel());
    let scalar_value = weighted_value(tape.value(out).data(), &weights) as f32;
    let loss = tape.custom(
        &[out],
        Tensor::scalar(scalar_value),
        Box::new(WeightedSum {
            weights: weights.clone(),
        }),
    );
    let grads = tape.backward(loss)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(v, (_, t))| {
            grads
                .get(*v)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    Ok((analytic, weights))
}

fn evaluate_weighted<F>(inputs: &[Tensor], op: &F, weights: &[f32]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut t = Tape::inference();
    let vs: Vec<Var> = inputs.iter().map(|p| t.leaf(p.clone())).collect();
    let out = op(&mut t, &vs)?;
    Ok(weighted_value(t.value(out).data(), weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        struct Broken;
        impl CustomOp for Broken {
            fn name(&self) -> &'static str {
                "broken"
            }
            fn backward(
                &self,
                inputs: &[&Tensor],
                _o: &Tensor,
                g: &[f32],
            ) -> Vec<Option<Vec<f32>>> {
                // d/dx x² is 2x; report x instead.
                vec![Some(
                    inputs[0].data().iter().zip(g).map(|(x, g)| x * g).collect(),
                )]
            }
        }
        let x = Tensor::from_fn(vec![5], |i| i as f32 + 1.0).with_requires_grad(true);
        let report = grad_check(
            "square",
            &[("x", x)],
            |t, v| {
                let val = t.value(v[0]);
                let out = Tensor::new(
                    val.shape().to_vec(),
                    val.data().iter().map(|x| x * x).collect(),
                )?;
                Ok(t.custom(&[v[0]], out, Box::new(Broken)))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_err() > 0.3);
    }

    #[test]
    fn skips_constant_inputs() {
        let x = Tensor::ones(vec![3]).with_requires_grad(true);
        let c = Tensor::ones(vec![3]);
        let report = grad_check(
            "add",
            &[("x", x), ("c", c)],
            |t, v| t.add(v[0], v[1]),
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.tensors.len(), 1);
        assert!(report.passed());
    }
}
