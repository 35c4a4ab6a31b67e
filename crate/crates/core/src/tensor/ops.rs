//! Elementwise arithmetic and reductions.

use super::tape::{BackwardCtx, Operation, Tape, Var};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Right-hand operand of an elementwise op.
#[derive(Debug, Clone, Copy)]
pub enum Rhs<T> {
    Var(Var),
    Scalar(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `(1,1,1,1)`
    Scalar,
    /// rhs is `(1,C,1,1)`
    Channel,
}

fn broadcast_kind(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b == Shape::SCALAR {
        Ok(Broadcast::Scalar)
    } else if b == Shape::new(1, a.c(), 1, 1) {
        Ok(Broadcast::Channel)
    } else {
        Err(Error::shape(op, format!("cannot combine {a} with {b}")))
    }
}

/// Calls `f(lhs_range, rhs_index)` for each run of lhs elements that share one
/// rhs element (or, for `Same`, one call with `rhs_index = usize::MAX`).
#[inline]
fn for_runs(kind: Broadcast, a: Shape, mut f: impl FnMut(std::ops::Range<usize>, usize)) {
    match kind {
        Broadcast::Same => f(0..a.numel(), usize::MAX),
        Broadcast::Scalar => f(0..a.numel(), 0),
        Broadcast::Channel => {
            let plane = a.plane();
            for (k, start) in (0..a.numel()).step_by(plane).enumerate() {
                f(start..start + plane, k % a.c());
            }
        }
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
    }
}

struct Binary {
    op: BinaryOp,
    a: Var,
    b: Var,
    kind: Broadcast,
}

impl<T: Scalar> Operation<T> for Binary {
    fn name(&self) -> &'static str {
        binary_name(self.op)
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let a = ctx.value(self.a);
        let b = ctx.value(self.b);
        let sa = a.shape();
        let ga = ctx.needs(0).then(|| match self.op {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul => {
                let mut out = vec![T::zero(); g.len()];
                for_runs(self.kind, sa, |r, j| {
                    if j == usize::MAX {
                        for ((o, &gi), &bi) in out[r.clone()]
                            .iter_mut()
                            .zip(&g[r.clone()])
                            .zip(&b.data()[r])
                        {
                            *o = gi * bi;
                        }
                    } else {
                        let bj = b.data()[j];
                        for (o, &gi) in out[r.clone()].iter_mut().zip(&g[r]) {
                            *o = gi * bj;
                        }
                    }
                });
                out
            }
        });
        let gb = ctx.needs(1).then(|| {
            let term = |i: usize, gi: T| match self.op {
                BinaryOp::Add => gi,
                BinaryOp::Sub => -gi,
                BinaryOp::Mul => gi * a.data()[i],
            };
            let mut out = vec![T::zero(); b.len()];
            for_runs(self.kind, sa, |r, j| {
                if j == usize::MAX {
                    for (i, o) in r.clone().zip(&mut out[r]) {
                        *o = term(i, g[i]);
                    }
                } else {
                    out[j] = r.fold(out[j], |acc, i| acc + term(i, g[i]));
                }
            });
            out
        });
        vec![ga, gb]
    }
}

struct ScalarOp<T> {
    op: BinaryOp,
    a: Var,
    s: T,
}

impl<T: Scalar> Operation<T> for ScalarOp<T> {
    fn name(&self) -> &'static str {
        match self.op {
            BinaryOp::Add => "add_scalar",
            BinaryOp::Sub => "sub_scalar",
            BinaryOp::Mul => "scale",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let ga = match self.op {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul => g.iter().map(|&v| v * self.s).collect(),
        };
        vec![Some(ga)]
    }
}

struct Reduce {
    a: Var,
    mean: bool,
}

impl<T: Scalar> Operation<T> for Reduce {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = ctx.value(self.a).len();
        let v = if self.mean {
            g[0] / T::from_usize(n).unwrap()
        } else {
            g[0]
        };
        vec![Some(vec![v; n])]
    }
}

impl<T: Scalar> Tape<T> {
    /// `a op b` where `b` has the same shape as `a`, is a scalar, or is a
    /// per-channel `(1,C,1,1)` tensor.
    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Rhs<T>) -> Result<Var> {
        match b {
            Rhs::Scalar(s) => {
                let f = |x: T| match op {
                    BinaryOp::Add => x + s,
                    BinaryOp::Sub => x - s,
                    BinaryOp::Mul => x * s,
                };
                let out = self.value(a).map(f);
                self.record(out, Box::new(ScalarOp { op, a, s }))
            }
            Rhs::Var(b) => {
                let sa = self.shape(a);
                let kind = broadcast_kind(binary_name(op), sa, self.shape(b))?;
                let (av, bv) = (self.value(a), self.value(b));
                let mut data = av.data().to_vec();
                let apply = |x: T, y: T| match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                };
                for_runs(kind, sa, |r, j| {
                    if j == usize::MAX {
                        for (x, &y) in data[r.clone()].iter_mut().zip(&bv.data()[r]) {
                            *x = apply(*x, y);
                        }
                    } else {
                        let y = bv.data()[j];
                        for x in &mut data[r] {
                            *x = apply(*x, y);
                        }
                    }
                });
                let out = Tensor::from_vec(sa, data)?;
                self.record(out, Box::new(Binary { op, a, b, kind }))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, Rhs::Var(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, Rhs::Var(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, Rhs::Var(b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, Rhs::Scalar(s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, Rhs::Scalar(s))
    }

    /// Sum of all elements as a `(1,1,1,1)` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.record(Tensor::scalar(s), Box::new(Reduce { a, mean: false }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.sum() / T::from_usize(v.len()).unwrap();
        self.record(Tensor::scalar(s), Box::new(Reduce { a, mean: true }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn add_rows() {
        let mut tape = Tape::new();
        let a = tape.constant(t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]));
        let b = tape.constant(t(Shape::new(1, 2, 1, 1), &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn scale_by_one_is_bitwise_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(Shape::new(2, 3, 4, 5), &mut rng);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.scale(v, 1.0).unwrap();
        let same = tape
            .value(y)
            .data()
            .iter()
            .zip(x.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn mul_by_zeros_annihilates_and_zeroes_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(Shape::new(1, 3, 1, 1), &[1.0, -2.0, 5.0]).with_requires_grad(true));
        let z = tape.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        let y = tape.mul(x, z).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_of_scaled_gives_constant_grad() {
        let mut tape = Tape::new();
        let x =
            tape.leaf(t(Shape::new(2, 1, 2, 1), &[0.3, -1.0, 7.0, 2.0]).with_requires_grad(true));
        let y = tape.scale(x, 2.0).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn square_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::scalar(3.0).with_requires_grad(true));
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn channel_broadcast_reduces_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::ones(Shape::new(2, 2, 1, 3)).with_requires_grad(true));
        let b = tape.leaf(t(Shape::new(1, 2, 1, 1), &[2.0, -1.0]).with_requires_grad(true));
        let y = tape.mul(x, b).unwrap();
        assert_eq!(tape.value(y).at([1, 1, 0, 2]), -1.0);
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[6.0, 6.0]);
        assert_eq!(g.get(x).unwrap().at([0, 0, 0, 0]), 2.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(Shape::new(1, 2, 2, 2)));
        let b = tape.constant(Tensor::ones(Shape::new(1, 2, 2, 1)));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        let c = tape.constant(Tensor::ones(Shape::new(1, 3, 1, 1)));
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(Shape::new(1, 2, 1, 1)).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::TapeConsumed)));
    }

    #[test]
    fn nan_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
