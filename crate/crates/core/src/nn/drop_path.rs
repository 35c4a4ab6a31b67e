use rand::Rng;

use super::session::{Mode, Session};
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Operation, Scalar, Tape, Tensor, Var};

struct ScaleSamplesOp<T> {
    x: Var,
    factors: Vec<T>,
}

impl<T: Scalar> Operation<T> for ScaleSamplesOp<T> {
    fn name(&self) -> &'static str {
        "scale_samples"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let per = g.len() / self.factors.len();
        let dx = g
            .chunks(per)
            .zip(&self.factors)
            .flat_map(|(c, &f)| c.iter().map(move |&v| v * f))
            .collect();
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Multiply sample `n` of `x` by `factors[n]`.
    pub fn scale_samples(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let s = self.shape(x);
        if factors.len() != s.n() {
            return Err(Error::shape(
                "scale_samples",
                format!("{} factors for {s}", factors.len()),
            ));
        }
        let per = s.sample_len();
        let data = self
            .value(x)
            .data()
            .chunks(per)
            .zip(&factors)
            .flat_map(|(c, &f)| c.iter().map(move |&v| v * f))
            .collect();
        let out = Tensor::from_vec(s, data)?;
        self.record(out, Box::new(ScaleSamplesOp { x, factors }))
    }
}

pub fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "drop-path rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Per-sample keep factors: 0 with probability `rate`, else `1/(1-rate)`.
pub fn keep_factors<T: Scalar>(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<T> {
    let survive = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                survive
            }
        })
        .collect()
}

/// Stochastic depth on a residual branch.
pub fn stochastic_depth<T: Scalar>(s: &mut Session<'_, T>, x: Var, rate: f64) -> Result<Var> {
    validate_rate(rate)?;
    if s.mode() == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let n = s.tape.shape(x).n();
    let factors = keep_factors(n, rate, s.rng());
    s.tape.scale_samples(x, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ParamLayout, ParamStore};
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(mode: Mode, rate: f64, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let store = ParamStore::<f64>::initialize(&ParamLayout::new(), 0);
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &store, mode, ChaCha8Rng::seed_from_u64(3));
        let v = s.tape.constant(x.clone());
        let y = stochastic_depth(&mut s, v, rate)?;
        Ok(s.tape.value(y).clone())
    }

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(Shape::new(6, 2, 3, 3), &mut rng);
        assert_eq!(run(Mode::Train, 0.0, &x).unwrap(), x);
        assert_eq!(run(Mode::Eval, 0.0, &x).unwrap(), x);
        assert_eq!(run(Mode::Eval, 0.7, &x).unwrap(), x);
    }

    #[test]
    fn rate_one_rejected() {
        let x = Tensor::<f64>::ones(Shape::new(1, 1, 1, 1));
        assert!(run(Mode::Eval, 1.0, &x).is_err());
        assert!(run(Mode::Train, -0.1, &x).is_err());
    }

    #[test]
    fn monte_carlo_drop_fraction() {
        let n = 10_000;
        let x = Tensor::<f64>::ones(Shape::new(n, 1, 1, 1));
        let y = run(Mode::Train, 0.5, &x).unwrap();
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((dropped - 0.5).abs() <= 0.02, "drop fraction {dropped}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        // Mean of a Bernoulli(0.5)·2 variable: std error 1/sqrt(n) = 0.01.
        let mean = y.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.04, "mean {mean}");
    }
}
