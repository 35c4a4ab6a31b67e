use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One decoupled-decay update at step `t` (1-based):
/// `p ← p − lr·(m̂/(√v̂+ε) + wd·p)`.
pub fn adamw_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut Moments,
    t: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adamw",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} at step {t}")));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let g = g.to_f64_lossy();
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let step = (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        let pv = p.to_f64_lossy();
        *p = T::from_f64_lossy(pv - lr * (step + weight_decay * pv));
    }
    Ok(())
}

/// AdamW over every trainable tensor of a store. Decay applies only to
/// parameters registered with `decay: true`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new<T: Scalar>(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        let moments = store
            .ids()
            .map(|id| {
                matches!(store.spec(id).kind, ParamKind::Weight { .. })
                    .then(|| Moments::new(store.get(id).len()))
            })
            .collect();
        AdamW {
            cfg,
            step: 0,
            moments,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(ParamId, Tensor<T>)],
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let mut seen = vec![false; self.moments.len()];
        for (id, g) in grads {
            seen[id.index()] = true;
            self.update(store, *id, g.data(), lr)?;
        }
        // Parameters that did not take part still decay.
        let zeros: Vec<ParamId> = store
            .trainable_ids()
            .filter(|id| !seen[id.index()])
            .collect();
        for id in zeros {
            let g = vec![T::zero(); store.get(id).len()];
            self.update(store, id, &g, lr)?;
        }
        Ok(())
    }

    fn update<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        id: ParamId,
        g: &[T],
        lr: f64,
    ) -> Result<()> {
        let decay = match store.spec(id).kind {
            ParamKind::Weight { decay: true } => self.cfg.weight_decay,
            ParamKind::Weight { decay: false } => 0.0,
            ParamKind::Buffer => return Ok(()),
        };
        let name = store.name(id).to_string();
        let state = self.moments[id.index()]
            .as_mut()
            .expect("trainable parameter has moments");
        adamw_step(
            store.get_mut(id).data_mut(),
            g,
            state,
            self.step,
            lr,
            decay,
            &self.cfg,
        )
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("`{name}`: {m}")),
            other => other,
        })
    }
}
