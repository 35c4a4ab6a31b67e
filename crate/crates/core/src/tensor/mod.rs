//! Dense rank-4 tensors and the reverse-mode tape that differentiates them.

mod gradcheck;
mod ops;
mod scalar;
mod serialize;
mod tape;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use ops::{BinaryOp, Rhs};
pub use scalar::{gemm, Scalar, Trans};
pub use serialize::MAGIC;
pub use tape::{BackwardCtx, Gradients, Operation, Tape, Var};

/// `(N, C, H, W)`. Rank-2 data is carried as `(N, C, 1, 1)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn n(&self) -> usize {
        self.0[0]
    }
    pub const fn c(&self) -> usize {
        self.0[1]
    }
    pub const fn h(&self) -> usize {
        self.0[2]
    }
    pub const fn w(&self) -> usize {
        self.0[3]
    }

    pub const fn numel(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2] * self.0[3]
    }

    /// Elements in one sample.
    pub const fn sample_len(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    pub const fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&d| d > 0)
    }

    pub fn with_n(self, n: usize) -> Self {
        Shape([n, self.0[1], self.0[2], self.0[3]])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

/// A dense `(N, C, H, W)` buffer in row-major order with an optional gradient.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if !shape.is_positive() {
            return Err(Error::shape(
                "tensor",
                format!("non-positive dimension in {shape}"),
            ));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(shape.is_positive(), "non-positive dimension in {shape}");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Self::zeros(other.shape)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Self::from_vec(shape, data).expect("from_fn fills every element")
    }

    pub fn uniform(shape: Shape, low: f64, high: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(low..high)))
    }

    pub fn randn(shape: Shape, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(v)
        })
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "set_grad",
                format!("{} elements for {}", grad.len(), self.shape),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn index(&self, [n, c, h, w]: [usize; 4]) -> usize {
        let [_, cc, hh, ww] = self.shape.0;
        ((n * cc + c) * hh + h) * ww + w
    }

    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.index(idx)]
    }

    /// Contiguous slice holding sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() || !shape.is_positive() {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {shape}", self.shape),
            ));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Compensated (Neumaier) sum of all elements.
    pub fn sum(&self) -> T {
        compensated_sum(self.data.iter().copied())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack single samples along the batch axis.
    pub fn stack(samples: &[&Tensor<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::shape("stack", "no samples"))?;
        let per = first.shape.with_n(1);
        let mut data = Vec::with_capacity(per.numel() * samples.len());
        let mut n = 0;
        for s in samples {
            if s.shape.with_n(1) != per {
                return Err(Error::shape(
                    "stack",
                    format!("{} vs {}", s.shape, first.shape),
                ));
            }
            data.extend_from_slice(&s.data);
            n += s.shape.n();
        }
        Tensor::from_vec(per.with_n(n), data)
    }

    /// Copy out sample `n` as a `(1,C,H,W)` tensor.
    pub fn sample_tensor(&self, n: usize) -> Self {
        Tensor::from_vec(self.shape.with_n(1), self.sample(n).to_vec()).expect("sample shape")
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_invariant_enforced() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 8]).unwrap();
        assert_eq!(t.len(), 8);
    }

    #[test]
    fn grad_must_match_shape() {
        let mut t = Tensor::<f64>::zeros(Shape::new(2, 1, 1, 1));
        assert!(t.set_grad(vec![1.0]).is_err());
        t.set_grad(vec![1.0, 2.0]).unwrap();
        assert_eq!(t.grad(), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::<f32>::from_fn(Shape::new(2, 3, 4, 5), |[n, c, h, w]| {
            (n * 1000 + c * 100 + h * 10 + w) as f32
        });
        assert_eq!(t.at([1, 2, 3, 4]), 1234.0);
        assert_eq!(t.data()[t.index([1, 0, 0, 0])], 1000.0);
        assert_eq!(t.sample(1)[0], 1000.0);
    }
}

pub fn compensated_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry = carry + ((sum - t) + v);
        } else {
            carry = carry + ((v - t) + sum);
        }
        sum = t;
    }
    sum + carry
}
