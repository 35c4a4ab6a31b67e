//! The training loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::augment::{mixup_cutmix, random_erasing, MixKind, Mixed};
use super::data::Dataset;
use super::eval::{top1_error, ModelClassifier};
use super::kd::{kd_loss, DistillConfig};
use super::optim::{AdamW, AdamWConfig};
use super::schedule::cosine_lr;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Mode, ParamStore, Session};
use crate::rng::{sub_stream, Stream};
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub erase_prob: f64,
    /// Stochastic-depth rate of the last block; earlier blocks ramp up to it.
    pub drop_path: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Stop after the first epoch whose train accuracy (percent) exceeds this.
    pub stop_at_train_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            base_lr: 5e-4,
            min_lr: 1e-6,
            warmup_epochs: 5,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            mixup_alpha: 0.8,
            cutmix_alpha: 1.0,
            erase_prob: 0.25,
            drop_path: 0.1,
            label_smoothing: 0.1,
            seed: 0,
            stop_at_train_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.base_lr > self.min_lr && self.min_lr >= 0.0) {
            return bad(format!(
                "need base_lr > min_lr >= 0, got {} and {}",
                self.base_lr, self.min_lr
            ));
        }
        for (name, p) in [
            ("erase_prob", self.erase_prob),
            ("label_smoothing", self.label_smoothing),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0,1]"));
            }
        }
        for (name, b) in [("beta1", self.betas.0), ("beta2", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0,1)"));
            }
        }
        if self.mixup_alpha < 0.0 || self.cutmix_alpha < 0.0 || self.weight_decay < 0.0 {
            return bad("mixing alphas and weight decay must be non-negative".into());
        }
        crate::nn::drop_path::validate_rate(self.drop_path)
    }

    pub fn to_config(&self) -> String {
        let mut s = format!(
            "epochs = {}\nbatch_size = {}\nbase_lr = {}\nmin_lr = {}\nwarmup_epochs = {}\nweight_decay = {}\n\
             betas = {}, {}\nmixup_alpha = {}\ncutmix_alpha = {}\nerase_prob = {}\ndrop_path = {}\n\
             label_smoothing = {}\nseed = {}\n",
            self.epochs,
            self.batch_size,
            self.base_lr,
            self.min_lr,
            self.warmup_epochs,
            self.weight_decay,
            self.betas.0,
            self.betas.1,
            self.mixup_alpha,
            self.cutmix_alpha,
            self.erase_prob,
            self.drop_path,
            self.label_smoothing,
            self.seed
        );
        if let Some(a) = self.stop_at_train_acc {
            s.push_str(&format!("stop_at_train_acc = {a}\n"));
        }
        s
    }
}

/// `key = value` lines; `#` starts a comment. Unset keys keep defaults.
impl FromStr for TrainConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::config(format!("line {}: bad number `{v}`", n + 1)))
            };
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::config(format!("line {}: bad integer `{v}`", n + 1)))
            };
            match k {
                "epochs" => c.epochs = int(v)? as usize,
                "batch_size" => c.batch_size = int(v)? as usize,
                "base_lr" | "lr" => c.base_lr = num(v)?,
                "min_lr" => c.min_lr = num(v)?,
                "warmup_epochs" => c.warmup_epochs = int(v)? as usize,
                "weight_decay" => c.weight_decay = num(v)?,
                "betas" => {
                    let (a, b) = v.split_once(',').ok_or_else(|| {
                        Error::config(format!("line {}: betas need two values", n + 1))
                    })?;
                    c.betas = (num(a.trim())?, num(b.trim())?);
                }
                "mixup_alpha" => c.mixup_alpha = num(v)?,
                "cutmix_alpha" => c.cutmix_alpha = num(v)?,
                "erase_prob" => c.erase_prob = num(v)?,
                "drop_path" => c.drop_path = num(v)?,
                "label_smoothing" => c.label_smoothing = num(v)?,
                "seed" => c.seed = int(v)?,
                "stop_at_train_acc" => c.stop_at_train_acc = Some(num(v)?),
                other => {
                    return Err(Error::config(format!(
                        "line {}: unknown key `{other}`",
                        n + 1
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Printed before training starts.
pub fn banner(cfg: &TrainConfig) -> String {
    format!(
        "AdamW lr {} (min {}) cosine, warmup {} epochs, wd {}, mixup {} cutmix {} erase {} smoothing {} drop-path {}\n\
         note: RandAugment and Repeated Augmentation are not implemented and are omitted from this recipe",
        cfg.base_lr,
        cfg.min_lr,
        cfg.warmup_epochs,
        cfg.weight_decay,
        cfg.mixup_alpha,
        cfg.cutmix_alpha,
        cfg.erase_prob,
        cfg.label_smoothing,
        cfg.drop_path
    )
}

pub const LOG_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Rate used for the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    /// Eval-mode accuracy on the un-augmented training set, percent.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6e}\t{:.6}\t{:.2}\t",
            self.epoch, self.lr, self.train_loss, self.train_acc
        )?;
        match self.val_acc {
            Some(v) => write!(f, "{v:.2}"),
            None => f.write_str("-"),
        }
    }
}

/// A frozen teacher for distillation. It only ever runs in eval mode
/// without gradient tracking.
pub struct Teacher<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore<f32>,
    pub cfg: DistillConfig,
}

const EVAL_BATCH: usize = 256;

/// Train `model` in place. Each step: erase, mix, forward in train mode,
/// label-smoothed (and optionally distilled) loss, backward, AdamW with a
/// warmup-cosine rate, then running-statistic updates. Deterministic given
/// `cfg.seed` and the initial parameters.
pub fn train(
    model: &mut Model,
    store: &mut ParamStore<f32>,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    teacher: Option<&Teacher<'_>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let want = model.input_shape(1);
    for ds in std::iter::once(data).chain(val) {
        if ds.sample_shape() != want || ds.num_classes != model.spec.num_classes {
            return Err(Error::config(format!(
                "dataset of {} images with {} classes does not fit a model taking {want} with {} classes",
                ds.sample_shape(),
                ds.num_classes,
                model.spec.num_classes
            )));
        }
    }
    if let Some(t) = teacher {
        t.cfg.validate()?;
        if t.model.spec.num_classes != model.spec.num_classes || t.model.input_shape(1) != want {
            return Err(Error::config(
                "teacher and student disagree on input shape or class count",
            ));
        }
    }
    model.set_drop_path(cfg.drop_path)?;
    let mut opt = AdamW::new(
        store,
        AdamWConfig {
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let warmup = (cfg.warmup_epochs * steps_per_epoch).min(total);
    let classes = model.spec.num_classes;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut sub_stream(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            lr = cosine_lr(step, total, warmup, cfg.base_lr, cfg.min_lr)?;
            let mut aug = sub_stream(cfg.seed, Stream::Augment, step as u64);
            let (mut x, labels) = data.batch(chunk)?;
            random_erasing(&mut x, cfg.erase_prob, &mut aug)?;
            let mixed = if chunk.len() >= 2 {
                mixup_cutmix(&x, cfg.mixup_alpha, cfg.cutmix_alpha, &mut aug)?
            } else {
                Mixed {
                    x,
                    perm: vec![0],
                    lambda: 1.0,
                    kind: MixKind::None,
                }
            };
            let target = mixed.targets(&labels, classes, cfg.label_smoothing)?;
            let teacher_logits = teacher
                .map(|t| t.model.predict(t.store, &mixed.x))
                .transpose()?;

            let mut tape = Tape::new();
            let mut s = Session::new(
                &mut tape,
                store,
                Mode::Train,
                sub_stream(cfg.seed, Stream::DropPath, step as u64),
            );
            let xv = s.tape.constant(mixed.x);
            let logits = model.forward(&mut s, xv)?;
            let loss = match (teacher, &teacher_logits) {
                (Some(t), Some(tl)) => kd_loss(s.tape, logits, tl, &target, &t.cfg)?,
                _ => s.tape.soft_cross_entropy(logits, &target)?,
            };
            let out = s.finish();
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            let mut grads = tape.backward(loss)?;
            let param_grads = out.param_grads(&mut grads);
            opt.step(store, &param_grads, lr)?;
            store.apply_updates(out.stat_updates)?;
            loss_sum += value * chunk.len() as f64;
        }
        let clf = ModelClassifier { model, store };
        let train_acc = 100.0 - top1_error(&clf, data, EVAL_BATCH)?;
        let val_acc = val
            .map(|v| top1_error(&clf, v, EVAL_BATCH).map(|e| 100.0 - e))
            .transpose()?;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / data.len() as f64,
            train_acc,
            val_acc,
        };
        on_epoch(&log);
        logs.push(log);
        if cfg.stop_at_train_acc.is_some_and(|a| train_acc > a) {
            break;
        }
    }
    Ok(logs)
}
