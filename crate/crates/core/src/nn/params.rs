//! Named parameter layouts and their materialized stores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    KaimingUniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable; `decay` selects whether weight decay applies.
    Weight { decay: bool },
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
    pub kind: ParamKind,
}

/// Shape-only description of every tensor a model owns, in a stable order.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        init: Init,
        kind: ParamKind,
    ) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape,
            init,
            kind,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamSpec)> {
        self.specs.iter().enumerate().map(|(i, s)| (ParamId(i), s))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| matches!(s.kind, ParamKind::Weight { .. }))
            .map(|s| s.shape.numel())
            .sum()
    }
}

/// Materialized tensors for a [`ParamLayout`].
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar = f32> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn initialize(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::KaimingUniform { fan_in } => {
                        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                        Tensor::from_fn(spec.shape, |_| {
                            T::from_f64_lossy(rng.gen_range(-bound..bound))
                        })
                    }
                    Init::Zeros => Tensor::zeros(spec.shape),
                    Init::Ones => Tensor::ones(spec.shape),
                };
                t.with_requires_grad(matches!(spec.kind, ParamKind::Weight { .. }))
            })
            .collect();
        ParamStore {
            specs: layout.specs.clone(),
            tensors,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.specs[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|id| matches!(self.specs[id.0].kind, ParamKind::Weight { .. }))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.specs
            .iter()
            .map(|s| s.name.as_str())
            .zip(&self.tensors)
    }

    /// Replace a tensor's values, keeping its gradient flag.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if value.shape() != slot.shape() {
            return Err(Error::shape(
                "param_store",
                format!(
                    "`{}` expects {}, got {}",
                    self.specs[id.0].name,
                    slot.shape(),
                    value.shape()
                ),
            ));
        }
        let flag = slot.requires_grad();
        *slot = value.with_requires_grad(flag);
        Ok(())
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) -> Result<()> {
        for (id, t) in updates {
            self.set(id, t)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
