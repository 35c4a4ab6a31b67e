//! Batch normalization over `(N, H, W)` per channel.

use super::params::{Init, ParamId, ParamKind, ParamLayout};
use super::session::{Mode, Session};
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Operation, Scalar, Shape, Tape, Tensor, Var};

/// Running statistics and hyper-parameters of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchNormState<T: Scalar> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
    /// Set once statistics come from data or explicit initialization.
    pub ready: bool,
}

impl<T: Scalar> BatchNormState<T> {
    /// Fresh state: mean 0, variance 1, not yet usable in eval mode.
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
            mode: Mode::Train,
            ready: false,
        }
    }

    pub fn initialize(&mut self, mean: Vec<T>, var: Vec<T>) -> Result<()> {
        if mean.len() != self.running_mean.len() || var.len() != self.running_var.len() {
            return Err(Error::shape(
                "batch_norm",
                "statistics length differs from channel count",
            ));
        }
        if var.iter().any(|v| *v <= T::zero()) {
            return Err(Error::config("running variance must be strictly positive"));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.ready = true;
        Ok(())
    }
}

fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let (c, plane) = (s.c(), s.plane());
    let count = T::from_usize(s.n() * plane).unwrap();
    let mut mean = vec![T::zero(); c];
    for n in 0..s.n() {
        for (ch, m) in mean.iter_mut().enumerate() {
            let off = (n * c + ch) * plane;
            *m = *m + x.data()[off..off + plane].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    let mut var = vec![T::zero(); c];
    for n in 0..s.n() {
        for (ch, v) in var.iter_mut().enumerate() {
            let off = (n * c + ch) * plane;
            let mu = mean[ch];
            *v = *v
                + x.data()[off..off + plane]
                    .iter()
                    .map(|&e| (e - mu) * (e - mu))
                    .sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / count);
    (mean, var)
}

struct BatchNormOp<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Train mode differentiates through the batch statistics.
    batch_stats: bool,
}

impl<T: Scalar> Operation<T> for BatchNormOp<T> {
    fn name(&self) -> &'static str {
        if self.batch_stats {
            "batch_norm_train"
        } else {
            "batch_norm_eval"
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let s = ctx.value(self.x).shape();
        let gamma = ctx.value(self.gamma).data();
        let (c, plane) = (s.c(), s.plane());
        let m = T::from_usize(s.n() * plane).unwrap();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for n in 0..s.n() {
            for ch in 0..c {
                let off = (n * c + ch) * plane;
                for i in off..off + plane {
                    sum_g[ch] = sum_g[ch] + g[i];
                    sum_gx[ch] = sum_gx[ch] + g[i] * self.xhat[i];
                }
            }
        }
        let dx = ctx.needs(0).then(|| {
            let mut dx = vec![T::zero(); g.len()];
            for n in 0..s.n() {
                for ch in 0..c {
                    let off = (n * c + ch) * plane;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in off..off + plane {
                        dx[i] = if self.batch_stats {
                            k * (g[i] - sum_g[ch] / m - self.xhat[i] * sum_gx[ch] / m)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            dx
        });
        vec![
            dx,
            ctx.needs(1).then_some(sum_gx),
            ctx.needs(2).then_some(sum_g),
        ]
    }
}

impl<T: Scalar> Tape<T> {
    /// Normalize with the given per-channel statistics, then apply `gamma`/`beta`.
    fn batch_norm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
        batch_stats: bool,
    ) -> Result<Var> {
        let s = self.shape(x);
        let affine = Shape::new(1, s.c(), 1, 1);
        if self.shape(gamma) != affine || self.shape(beta) != affine {
            return Err(Error::shape(
                "batch_norm",
                format!("affine parameters must be {affine}"),
            ));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let plane = s.plane();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (i, (&e, (xh, o))) in xv
            .data()
            .iter()
            .zip(xhat.iter_mut().zip(out.iter_mut()))
            .enumerate()
        {
            let ch = (i / plane) % s.c();
            *xh = (e - mean[ch]) * inv_std[ch];
            *o = gv[ch] * *xh + bv[ch];
        }
        let out = Tensor::from_vec(s, out)?;
        self.record(
            out,
            Box::new(BatchNormOp {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            }),
        )
    }
}

/// Functional batch norm. Train mode normalizes by batch statistics and folds
/// them into the running averages as `(1 - m) * old + m * batch` (biased
/// batch variance); eval mode uses the running statistics only.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState<T>,
) -> Result<Var> {
    let c = tape.shape(x).c();
    if c != state.running_mean.len() {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "input has {c} channels, state has {}",
                state.running_mean.len()
            ),
        ));
    }
    let eps = T::from_f64_lossy(state.epsilon);
    match state.mode {
        Mode::Train => {
            let (mean, var) = channel_stats(tape.value(x));
            let y = tape.batch_norm_with(x, gamma, beta, &mean, &var, eps, true)?;
            let m = T::from_f64_lossy(state.momentum);
            let keep = T::one() - m;
            for ch in 0..c {
                state.running_mean[ch] = keep * state.running_mean[ch] + m * mean[ch];
                state.running_var[ch] = keep * state.running_var[ch] + m * var[ch];
            }
            state.ready = true;
            Ok(y)
        }
        Mode::Eval => {
            if !state.ready {
                return Err(Error::MissingStatistics("<functional>".into()));
            }
            let (mean, var) = (state.running_mean.clone(), state.running_var.clone());
            tape.batch_norm_with(x, gamma, beta, &mean, &var, eps, false)
        }
    }
}

/// Batch-norm layer whose affine parameters and statistics live in a store.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// `(1,1,1,1)` counter of statistic updates; zero means "no statistics".
    pub tracked: ParamId,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm2d {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPSILON: f64 = 1e-5;

    pub fn new(layout: &mut ParamLayout, name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        let affine = Shape::new(1, channels, 1, 1);
        let no_decay = ParamKind::Weight { decay: false };
        BatchNorm2d {
            gamma: layout.push(format!("{name}.gamma"), affine, Init::Ones, no_decay),
            beta: layout.push(format!("{name}.beta"), affine, Init::Zeros, no_decay),
            running_mean: layout.push(
                format!("{name}.running_mean"),
                affine,
                Init::Zeros,
                ParamKind::Buffer,
            ),
            running_var: layout.push(
                format!("{name}.running_var"),
                affine,
                Init::Ones,
                ParamKind::Buffer,
            ),
            tracked: layout.push(
                format!("{name}.num_batches_tracked"),
                Shape::SCALAR,
                Init::Zeros,
                ParamKind::Buffer,
            ),
            momentum: Self::MOMENTUM,
            epsilon: Self::EPSILON,
            channels,
            name,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let tracked = s.buffer(self.tracked).data()[0];
        let mut state = BatchNormState {
            running_mean: s.buffer(self.running_mean).data().to_vec(),
            running_var: s.buffer(self.running_var).data().to_vec(),
            momentum: self.momentum,
            epsilon: self.epsilon,
            mode: s.mode(),
            ready: tracked > T::zero(),
        };
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let y = batch_norm(s.tape, x, gamma, beta, &mut state).map_err(|e| match e {
            Error::MissingStatistics(_) => Error::MissingStatistics(self.name.clone()),
            other => other,
        })?;
        if s.mode() == Mode::Train {
            let shape = Shape::new(1, self.channels, 1, 1);
            s.push_update(
                self.running_mean,
                Tensor::from_vec(shape, state.running_mean)?,
            );
            s.push_update(
                self.running_var,
                Tensor::from_vec(shape, state.running_var)?,
            );
            s.push_update(self.tracked, Tensor::scalar(tracked + T::one()));
        }
        Ok(y)
    }
}
