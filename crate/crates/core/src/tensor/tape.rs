use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::Hasher;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
pub trait Operation<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parent nodes, in the order `backward` returns their gradients.
    fn inputs(&self) -> Vec<Var>;

    /// Vector-Jacobian product. Returns one entry per input; entries for inputs
    /// with `ctx.needs(i) == false` may be `None`.
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T]) -> Vec<Option<Vec<T>>>;

    /// For piecewise ops, a hash of which piece each output came from
    /// (ReLU sign pattern, max-pool argmax). Smooth ops return `None`.
    fn branch_key(&self, _output: &Tensor<T>) -> Option<u64> {
        None
    }
}

pub struct BackwardCtx<'a, T: Scalar> {
    tape: &'a Tape<T>,
    output: Var,
    needs: &'a [bool],
}

impl<'a, T: Scalar> BackwardCtx<'a, T> {
    pub fn value(&self, var: Var) -> &'a Tensor<T> {
        &self.tape.nodes[var.0].value
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.value(self.output)
    }

    pub fn needs(&self, input: usize) -> bool {
        self.needs[input]
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Option<Box<dyn Operation<T>>>,
    requires_grad: bool,
}

/// Append-only record of a forward computation. Parents always precede their
/// children, so a single reverse sweep visits every node exactly once.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    branches: Option<DefaultHasher>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients<T: Scalar> {
    leaves: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.leaves.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.leaves.iter().map(|(v, t)| (*v, t))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            branches: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Leaf node; participates in differentiation iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.clear_grad();
        let requires_grad = tensor.requires_grad();
        self.push(tensor, None, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Copy of `var` that blocks gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let v = self.value(var).clone();
        self.constant(v)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Start folding every piecewise op's branch key into
    /// [`Tape::branch_signature`].
    pub fn track_branches(&mut self) {
        self.branches.get_or_insert_with(DefaultHasher::new);
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branches.as_ref().map(Hasher::finish)
    }

    pub fn op_name(&self, var: Var) -> Option<&'static str> {
        self.nodes[var.0].op.as_ref().map(|op| op.name())
    }

    /// Append the result of an operation. The op is kept for backward only if
    /// at least one input requires a gradient.
    pub fn record(&mut self, value: Tensor<T>, op: Box<dyn Operation<T>>) -> Result<Var> {
        let inputs = op.inputs();
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::shape(
                op.name(),
                format!("unknown input node {}", bad.0),
            ));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        if let Some(h) = self.branches.as_mut() {
            if let Some(key) = op.branch_key(&value) {
                h.write_u64(key);
            }
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = requires_grad.then_some(op);
        Ok(self.push(value.with_requires_grad(false), op, requires_grad))
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        op: Option<Box<dyn Operation<T>>>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a `(1,1,1,1)` loss. Consumes the tape: a second call
    /// returns [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let loss_shape = self.shape(loss);
        if loss_shape != Shape::SCALAR {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(op) = node.op.as_ref() else {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                let t = Tensor::from_vec(node.value.shape(), g).expect("grad matches node shape");
                out.leaves.insert(Var(idx), t);
                continue;
            };
            let Some(g) = grads[idx].take() else { continue };
            let inputs = op.inputs();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let ctx = BackwardCtx {
                tape: self,
                output: Var(idx),
                needs: &needs,
            };
            let parts = op.backward(&ctx, &g);
            debug_assert_eq!(
                parts.len(),
                inputs.len(),
                "{} returned wrong arity",
                op.name()
            );
            for ((input, part), need) in inputs.iter().zip(parts).zip(&needs) {
                let (Some(part), true) = (part, *need) else {
                    continue;
                };
                debug_assert_eq!(part.len(), self.nodes[input.0].value.len(), "{}", op.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&part).for_each(|(a, p)| *a = *a + *p),
                    slot @ None => *slot = Some(part),
                }
            }
        }
        // Leaves recorded after the loss never influence it.
        for (idx, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && node.op.is_none() {
                out.leaves
                    .insert(Var(idx), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}
