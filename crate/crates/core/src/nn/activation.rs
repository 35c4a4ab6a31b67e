use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Operation, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ActKind {
    #[default]
    Relu,
    /// Tanh approximation.
    Gelu,
}

impl fmt::Display for ActKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActKind::Relu => "relu",
            ActKind::Gelu => "gelu",
        })
    }
}

impl FromStr for ActKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(ActKind::Relu),
            "gelu" => Ok(ActKind::Gelu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// `0.5 x (1 + tanh(sqrt(2/π) (x + 0.044715 x³)))`
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(SQRT_2_OVER_PI);
    let a = T::from_f64_lossy(GELU_CUBIC);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(SQRT_2_OVER_PI);
    let a = T::from_f64_lossy(GELU_CUBIC);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

struct ActOp {
    x: Var,
    kind: ActKind,
}

impl<T: Scalar> Operation<T> for ActOp {
    fn name(&self) -> &'static str {
        match self.kind {
            ActKind::Relu => "relu",
            ActKind::Gelu => "gelu",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = ctx.value(self.x).data();
        let dx = match self.kind {
            // Subgradient at 0 is 0.
            ActKind::Relu => g
                .iter()
                .zip(x)
                .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                .collect(),
            ActKind::Gelu => g
                .iter()
                .zip(x)
                .map(|(&gi, &xi)| gi * gelu_grad(xi))
                .collect(),
        };
        vec![Some(dx)]
    }

    fn branch_key(&self, output: &Tensor<T>) -> Option<u64> {
        (self.kind == ActKind::Relu).then(|| {
            let mut h = DefaultHasher::new();
            for chunk in output.data().chunks(64) {
                let bits = chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |b, (i, &v)| b | ((v > T::zero()) as u64) << i);
                h.write_u64(bits);
            }
            h.finish()
        })
    }
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&mut self, kind: ActKind, x: Var) -> Result<Var> {
        let out = match kind {
            ActKind::Relu => self
                .value(x)
                .map(|v| if v > T::zero() { v } else { T::zero() }),
            ActKind::Gelu => self.value(x).map(gelu),
        };
        self.record(out, Box::new(ActOp { x, kind }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(ActKind::Relu, x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(ActKind::Gelu, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f64>::new();
        let x =
            tape.constant(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_grad_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 1)).with_requires_grad(true));
        let y = tape.relu(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // Direct evaluation of the tanh formula at 3.
        let direct = 0.5 * 3.0 * (1.0 + (SQRT_2_OVER_PI * (3.0 + GELU_CUBIC * 27.0)).tanh());
        assert_eq!(gelu(3.0f64), direct);
        assert!((gelu(3.0f64) - 2.9964).abs() < 5e-5);
    }

    #[test]
    fn parse_round_trip() {
        for k in [ActKind::Relu, ActKind::Gelu] {
            assert_eq!(k.to_string().parse::<ActKind>().unwrap(), k);
        }
        assert!("tanh".parse::<ActKind>().is_err());
    }
}
