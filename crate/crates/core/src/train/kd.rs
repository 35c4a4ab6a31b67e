//! Soft knowledge distillation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    /// Softmax temperature τ, must be positive.
    pub temperature: f64,
    /// Weight λ of the distillation term, in `[0,1]`.
    pub weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 1.0,
            weight: 0.5,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config(format!(
                "distillation temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::config(format!(
                "distillation weight {} outside [0,1]",
                self.weight
            )));
        }
        Ok(())
    }
}

/// `(1−λ)·CE(s, target) + λ·τ²·KL(softmax(t/τ) ‖ softmax(s/τ))`.
///
/// `target` holds (possibly smoothed or mixed) label distributions. The
/// teacher logits enter as plain data, so gradients reach only `student`.
pub fn kd_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student: Var,
    teacher: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &DistillConfig,
) -> Result<Var> {
    cfg.validate()?;
    let ce = tape.soft_cross_entropy(student, target)?;
    let kl = tape.kl_div(student, teacher, T::from_f64_lossy(cfg.temperature))?;
    let a = tape.scale(ce, T::from_f64_lossy(1.0 - cfg.weight))?;
    let b = tape.scale(
        kl,
        T::from_f64_lossy(cfg.weight * cfg.temperature * cfg.temperature),
    )?;
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::one_hot;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn value(t: &Tape<f64>, v: Var) -> f64 {
        t.value(v).data()[0]
    }

    #[test]
    fn hand_computed_two_class_kl() {
        let s = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.0, 1.0]).unwrap();
        let t = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![2.0, 0.0]).unwrap();
        let y = one_hot::<f64>(&[0], 2, 0.0).unwrap();
        let mut tape = Tape::new();
        let sv = tape.constant(s);
        let l = kd_loss(
            &mut tape,
            sv,
            &t,
            &y,
            &DistillConfig {
                temperature: 1.0,
                weight: 1.0,
            },
        )
        .unwrap();
        let q0 = 2f64.exp() / (2f64.exp() + 1.0);
        let p0 = 1.0 / (1.0 + 1f64.exp());
        let want = q0 * (q0 / p0).ln() + (1.0 - q0) * ((1.0 - q0) / (1.0 - p0)).ln();
        assert!((value(&tape, l) - want).abs() < 1e-14);
    }

    #[test]
    fn self_distillation_leaves_only_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Tensor::<f64>::randn(Shape::new(4, 5, 1, 1), &mut rng);
        let y = one_hot::<f64>(&[0, 1, 2, 3], 5, 0.1).unwrap();
        let cfg = DistillConfig {
            temperature: 2.0,
            weight: 0.3,
        };
        let mut tape = Tape::new();
        let sv = tape.constant(s.clone());
        let l = kd_loss(&mut tape, sv, &s, &y, &cfg).unwrap();
        let ce = tape.soft_cross_entropy(sv, &y).unwrap();
        assert_eq!(value(&tape, l), 0.7 * value(&tape, ce));
    }

    #[test]
    fn bad_temperature_rejected() {
        let s = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1));
        let y = one_hot::<f64>(&[0], 2, 0.0).unwrap();
        let mut tape = Tape::new();
        let sv = tape.constant(s.clone());
        assert!(kd_loss(
            &mut tape,
            sv,
            &s,
            &y,
            &DistillConfig {
                temperature: 0.0,
                weight: 0.5
            }
        )
        .is_err());
    }
}
