use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::flops::count_flops;

/// Hard cap on the scan; far beyond any sensible stage.
const MAX_DEPTH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TuneResult {
    pub depth: usize,
    pub macs: u64,
}

pub fn total_macs(spec: &ModelSpec) -> Result<u64> {
    let model = Model::build(spec)?;
    Ok(count_flops(&model, model.input_shape(1))?.total)
}

/// Smallest stage-3 depth whose single-image MAC total lies within
/// `budget·(1 ± tol)`. Totals grow strictly with depth, so the scan stops
/// at the first depth past the band.
pub fn tune_stage3_depth(spec: &ModelSpec, budget: f64, tol: f64) -> Result<TuneResult> {
    if !(budget > 0.0) || !(0.0..1.0).contains(&tol) {
        return Err(Error::config(format!(
            "budget must be positive and tol in [0, 1), got {budget} and {tol}"
        )));
    }
    let (lo, hi) = (budget * (1.0 - tol), budget * (1.0 + tol));
    let mut below = None;
    for depth in 1..=MAX_DEPTH {
        let macs = total_macs(&spec.with_depth3(depth))?;
        let m = macs as f64;
        if m > hi {
            return Err(Error::BudgetUnreachable {
                budget,
                tol,
                below,
                above: Some((depth, macs)),
            });
        }
        if m >= lo {
            return Ok(TuneResult { depth, macs });
        }
        below = Some((depth, macs));
    }
    Err(Error::BudgetUnreachable {
        budget,
        tol,
        below,
        above: None,
    })
}
