//! Named parameter storage and the builder used to create layers.

use std::fmt;

use rand::Rng;

use crate::autodiff::{ConvSpec, Tensor};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Batch-norm running mean or variance.
    RunningStat,
}

impl ParamKind {
    pub fn code(self) -> u8 {
        match self {
            ParamKind::Trainable => 0,
            ParamKind::RunningStat => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ParamKind::Trainable),
            1 => Some(ParamKind::RunningStat),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Parameters in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(id, _)| id)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for p in &self.params {
            let group = p.name.split('.').next().unwrap_or("").to_string();
            let row = match c.groups.iter_mut().find(|g| g.name == group) {
                Some(row) => row,
                None => {
                    c.groups.push(GroupCount {
                        name: group,
                        ..GroupCount::default()
                    });
                    c.groups.last_mut().expect("just pushed")
                }
            };
            let n = p.tensor.numel();
            match p.kind {
                ParamKind::Trainable => {
                    row.trainable += n;
                    c.trainable += n;
                }
                ParamKind::RunningStat => {
                    row.non_trainable += n;
                    c.non_trainable += n;
                }
            }
        }
        c.total = c.trainable + c.non_trainable;
        c
    }

    /// True when every tensor holds only finite values.
    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    fn push(&mut self, name: String, kind: ParamKind, tensor: Tensor) -> Result<ParamId> {
        if self.find(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
        }
        self.params.push(Param { name, kind, tensor });
        Ok(ParamId(self.params.len() - 1))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupCount {
    pub name: String,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
    /// Per top-level module, in creation order.
    pub groups: Vec<GroupCount>,
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>10} {:>14}",
            "module", "trainable", "non-trainable"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<12} {:>10} {:>14}",
                g.name, g.trainable, g.non_trainable
            )?;
        }
        writeln!(
            f,
            "{:<12} {:>10} {:>14}",
            "sum", self.trainable, self.non_trainable
        )?;
        write!(f, "total {}", self.total)
    }
}

/// Convolution weights and bias. Weights are Kaiming-uniform with bound
/// `sqrt(6 / fan_in)`; the bias starts at zero.
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Batch-norm affine parameters and running statistics.
#[derive(Clone, Debug)]
pub struct Norm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Creates parameters with per-name seeded initialization.
pub struct ParamBuilder {
    seed: u64,
    prefix: Vec<String>,
    store: ParamStore,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            seed,
            prefix: Vec::new(),
            store: ParamStore::default(),
        }
    }

    /// Runs `f` with `name` appended to the parameter name prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec) -> Result<Conv> {
        spec.validate()?;
        self.scope(name, |b| {
            let shape = spec.weight_shape();
            let fan_in = shape[1] * shape[2] * shape[3];
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let wname = b.full_name("weight");
            let mut rng = seed::stream(b.seed, &wname);
            let weight = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound));
            let weight = b.store.push(wname, ParamKind::Trainable, weight)?;
            let bias = b.store.push(
                b.full_name("bias"),
                ParamKind::Trainable,
                Tensor::zeros(vec![spec.out_channels]),
            )?;
            Ok(Conv { spec, weight, bias })
        })
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Result<Norm> {
        if channels == 0 {
            return Err(Error::invalid("batch norm needs at least one channel"));
        }
        self.scope(name, |b| {
            let gamma = b.store.push(
                b.full_name("gamma"),
                ParamKind::Trainable,
                Tensor::ones(vec![channels]),
            )?;
            let beta = b.store.push(
                b.full_name("beta"),
                ParamKind::Trainable,
                Tensor::zeros(vec![channels]),
            )?;
            let running_mean = b.store.push(
                b.full_name("running_mean"),
                ParamKind::RunningStat,
                Tensor::zeros(vec![channels]),
            )?;
            let running_var = b.store.push(
                b.full_name("running_var"),
                ParamKind::RunningStat,
                Tensor::ones(vec![channels]),
            )?;
            Ok(Norm {
                channels,
                gamma,
                beta,
                running_mean,
                running_var,
            })
        })
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}
