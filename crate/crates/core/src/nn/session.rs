use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: binds store tensors onto a tape on first use, carries
/// the train/eval mode and the RNG for stochastic layers, and collects
/// running-statistic updates to apply once the pass is done.
pub struct Session<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    rng: ChaCha8Rng,
    track_grads: bool,
    bound: Vec<Option<Var>>,
    updates: Vec<(ParamId, Tensor<T>)>,
}

pub struct SessionOutput<T: Scalar> {
    pub bindings: Vec<(ParamId, Var)>,
    pub stat_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> SessionOutput<T> {
    /// Pull the gradient of every bound trainable parameter out of `grads`.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.bindings
            .iter()
            .filter_map(|&(id, var)| grads.take(var).map(|g| (id, g)))
            .collect()
    }
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        store: &'a ParamStore<T>,
        mode: Mode,
        rng: ChaCha8Rng,
    ) -> Self {
        Session {
            tape,
            store,
            mode,
            rng,
            track_grads: true,
            bound: vec![None; store.len()],
            updates: Vec::new(),
        }
    }

    /// Parameters are bound as constants; nothing will require a gradient.
    pub fn without_grads(mut self) -> Self {
        self.track_grads = false;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let flag = self.track_grads && t.requires_grad();
        let v = self.tape.leaf(t.with_requires_grad(flag));
        self.bound[id.0] = Some(v);
        v
    }

    /// Route a parameter through an existing node instead of the store value.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.0] = Some(var);
    }

    pub fn buffer(&self, id: ParamId) -> &'a Tensor<T> {
        self.store.get(id)
    }

    pub fn push_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    pub fn finish(self) -> SessionOutput<T> {
        let bindings = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        SessionOutput {
            bindings,
            stat_updates: self.updates,
        }
    }
}
