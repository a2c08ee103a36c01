//! One forward pass over a [`ParamStore`]: the tape, the parameter bindings
//! and the batch statistics waiting to be folded into the running estimates.

use crate::architecture::params::{Conv, Norm, ParamId, ParamKind, ParamStore};
use crate::autodiff::batchnorm::update_running;
use crate::autodiff::{BatchStats, BnMode, Tape, Var};
use crate::error::Result;

/// Stage labels with the shape recorded after each.
pub type Trace = Vec<(&'static str, Vec<usize>)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize; running estimates are collected.
    Train,
    /// Running estimates normalize.
    Eval,
}

/// Batch statistics of one norm layer, pending application.
#[derive(Clone, Debug)]
pub struct PendingStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    pending: Vec<PendingStats>,
    trace: Option<Trace>,
}

/// Everything a finished session leaves behind.
pub struct SessionOutput {
    pub tape: Tape,
    pub bindings: Vec<Option<Var>>,
    pub pending: Vec<PendingStats>,
    pub trace: Trace,
}

impl<'a> Session<'a> {
    /// Trainable parameters require gradients iff `tape` records them.
    pub fn new(store: &'a ParamStore, mode: Mode, tape: Tape) -> Self {
        Session {
            tape,
            store,
            bound: vec![None; store.len()],
            mode,
            pending: Vec::new(),
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// The tape variable of a parameter, recorded on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let t = p
            .tensor
            .clone()
            .with_requires_grad(p.kind == ParamKind::Trainable);
        let v = self.tape.leaf(t);
        self.bound[id.0] = Some(v);
        v
    }

    /// Uses `v` in place of the stored value of `id` for the rest of the pass.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    pub fn record_shape(&mut self, label: &'static str, v: Var) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push((label, self.tape.value(v).shape().to_vec()));
        }
    }

    pub fn conv(&mut self, layer: &Conv, x: Var) -> Result<Var> {
        let w = self.param(layer.weight);
        let b = self.param(layer.bias);
        if layer.spec.transposed {
            self.tape.deconv2d(x, w, Some(b), &layer.spec)
        } else {
            self.tape.conv2d(x, w, Some(b), &layer.spec)
        }
    }

    pub fn norm(&mut self, layer: &Norm, x: Var) -> Result<Var> {
        let gamma = self.param(layer.gamma);
        let beta = self.param(layer.beta);
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm(x, gamma, beta, BnMode::Train)?;
                if let Some(stats) = stats {
                    self.pending.push(PendingStats {
                        running_mean: layer.running_mean,
                        running_var: layer.running_var,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = self.store;
                let mode = BnMode::Eval {
                    mean: store.tensor(layer.running_mean).data(),
                    var: store.tensor(layer.running_var).data(),
                };
                Ok(self.tape.batch_norm(x, gamma, beta, mode)?.0)
            }
        }
    }

    pub fn finish(self) -> SessionOutput {
        SessionOutput {
            tape: self.tape,
            bindings: self.bound,
            pending: self.pending,
            trace: self.trace.unwrap_or_default(),
        }
    }
}

/// Folds each layer's batch statistics into its running estimates.
pub fn apply_pending(store: &mut ParamStore, pending: &[PendingStats]) {
    for p in pending {
        let mut mean = store.tensor(p.running_mean).data().to_vec();
        let mut var = store.tensor(p.running_var).data().to_vec();
        update_running(&mut mean, &mut var, &p.stats);
        store
            .tensor_mut(p.running_mean)
            .data_mut()
            .copy_from_slice(&mean);
        store
            .tensor_mut(p.running_var)
            .data_mut()
            .copy_from_slice(&var);
    }
}
