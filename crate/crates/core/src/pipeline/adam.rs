//! Adam with bias correction over the trainable tensors of a [`ParamStore`].

use crate::architecture::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "adam hyperparameters out of range: {self:?}"
            )))
        }
    }
}

/// First and second moment estimates, one pair per trainable tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    /// Steps taken so far.
    pub step: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let ids: Vec<ParamId> = store.trainable().collect();
        let zeros = || {
            ids.iter()
                .map(|id| vec![0.0f64; store.tensor(*id).numel()])
                .collect()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
            ids,
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        let i = self.ids.iter().position(|x| *x == id)?;
        Some((&self.m[i], &self.v[i]))
    }

    /// One update. `grad(id)` returns the gradient of a trainable tensor, or
    /// `None` when it did not take part in the loss. Every gradient is
    /// checked before any parameter moves.
    pub fn update<'g>(
        &mut self,
        store: &mut ParamStore,
        grad: impl Fn(ParamId) -> Option<&'g [f32]>,
    ) -> Result<()> {
        for id in &self.ids {
            if let Some(g) = grad(*id) {
                if g.len() != store.tensor(*id).numel() {
                    return Err(Error::shape(
                        "adam",
                        store.get(*id).name.clone(),
                        "gradient length",
                    ));
                }
                if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("gradient of '{}' at entry {j}", store.get(*id).name),
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, id) in self.ids.iter().enumerate() {
            let Some(g) = grad(*id) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.tensor_mut(*id).data_mut();
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = beta1 * m[j] + (1.0 - beta1) * gj;
                let vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                m[j] = mj;
                v[j] = vj;
                let update = learning_rate * (mj / c1) / ((vj / c2).sqrt() + eps);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
