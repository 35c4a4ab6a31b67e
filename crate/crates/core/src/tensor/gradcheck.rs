//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{Scalar, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates left out because `x ± h` crossed a kink (a ReLU changed
    /// sign or a max-pool window changed winner), where central differences
    /// do not estimate the derivative.
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<T: Scalar, F>(f: &F, x: &Tensor<T>) -> Result<(f64, Option<u64>)>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.track_branches();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    let shape = tape.shape(out);
    if shape != Shape::SCALAR {
        return Err(Error::NonScalarLoss(shape));
    }
    Ok((
        tape.value(out).data()[0].to_f64_lossy(),
        tape.branch_signature(),
    ))
}

fn analytic<T: Scalar, F>(f: &F, x: &Tensor<T>) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone().with_requires_grad(true));
    let out = f(&mut tape, v)?;
    let mut grads = tape.backward(out)?;
    let g = grads.take(v).expect("leaf gradient");
    Ok(g.data().iter().map(|v| v.to_f64_lossy()).collect())
}

fn check_coords<T: Scalar, F>(
    f: &F,
    x: &Tensor<T>,
    h: f64,
    tol: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let grad = analytic(f, x)?;
    let (_, base) = eval(f, x)?;
    let mut report = GradCheckReport {
        passed: true,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        let mut diff = |mult: f64| -> Result<Option<f64>> {
            let step = T::from_f64_lossy(h * mult);
            probe.data_mut()[i] = orig + step;
            let (plus, sig_plus) = eval(f, &probe)?;
            probe.data_mut()[i] = orig - step;
            let (minus, sig_minus) = eval(f, &probe)?;
            probe.data_mut()[i] = orig;
            if sig_plus != base || sig_minus != base {
                return Ok(None);
            }
            // Use the step actually realised in T to keep f32 checks honest.
            let realised = ((orig + step) - (orig - step)).to_f64_lossy();
            Ok(Some((plus - minus) / realised))
        };
        let (Some(d1), Some(d2)) = (diff(1.0)?, diff(2.0)?) else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        // Richardson extrapolation cancels the h² term of both quotients.
        let numeric = (4.0 * d1 - d2) / 3.0;
        let err = relative_error(grad[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

/// Compare the tape gradient of scalar-valued `f` at `x` against central
/// differences on every coordinate. With `D(h) = (f(x+h) - f(x-h)) / 2h`
/// the estimate is `(4 D(h) - D(2h)) / 3`, accurate to O(h⁴).
pub fn grad_check<T: Scalar, F>(f: F, x: &Tensor<T>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    check_coords(&f, x, h, tol, &coords)
}

/// Like [`grad_check`] but on `count` distinct random coordinates, for inputs
/// too large to sweep exhaustively.
pub fn grad_check_sampled<T: Scalar, F>(
    f: F,
    x: &Tensor<T>,
    h: f64,
    tol: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let count = count.min(x.len());
    let mut coords = sample(rng, x.len(), count).into_vec();
    coords.sort_unstable();
    check_coords(&f, x, h, tol, &coords)
}
