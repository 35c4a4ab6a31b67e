use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Operation, Scalar, Shape, Tape, Tensor, Var};

/// Row-wise log-softmax over the `C` axis of an `(N,C,1,1)` buffer.
pub fn log_softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

pub fn softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    log_softmax(logits, classes)
        .into_iter()
        .map(T::exp)
        .collect()
}

/// One-hot rows with label smoothing `eps`: `1-eps+eps/K` on the label,
/// `eps/K` elsewhere.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize, eps: f64) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let off = eps / classes as f64;
    let on = 1.0 - eps + off;
    let mut data = vec![T::from_f64_lossy(off); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = T::from_f64_lossy(on);
    }
    Tensor::from_vec(Shape::new(labels.len(), classes, 1, 1), data)
}

fn check_logits(op: &'static str, s: Shape, other: Shape) -> Result<()> {
    if s.plane() != 1 || s != other {
        return Err(Error::shape(op, format!("logits {s}, target {other}")));
    }
    Ok(())
}

struct SoftCrossEntropyOp<T> {
    logits: Var,
    target: Vec<T>,
    log_probs: Vec<T>,
}

impl<T: Scalar> Operation<T> for SoftCrossEntropyOp<T> {
    fn name(&self) -> &'static str {
        "soft_cross_entropy"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let s = ctx.value(self.logits).shape();
        let k = s.c();
        let scale = g[0] / T::from_usize(s.n()).unwrap();
        let mut dz = Vec::with_capacity(self.target.len());
        for (t, lp) in self.target.chunks(k).zip(self.log_probs.chunks(k)) {
            let mass = t.iter().copied().sum::<T>();
            dz.extend(
                t.iter()
                    .zip(lp)
                    .map(|(&ti, &li)| scale * (li.exp() * mass - ti)),
            );
        }
        vec![Some(dz)]
    }
}

struct KlDivOp<T> {
    student: Var,
    teacher_probs: Vec<T>,
    temperature: T,
}

impl<T: Scalar> Operation<T> for KlDivOp<T> {
    fn name(&self) -> &'static str {
        "kl_div"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.student]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let z = ctx.value(self.student);
        let k = z.shape().c();
        let scaled: Vec<T> = z.data().iter().map(|&v| v / self.temperature).collect();
        let p = softmax(&scaled, k);
        let scale = g[0] / (self.temperature * T::from_usize(z.shape().n()).unwrap());
        let dz = p
            .iter()
            .zip(&self.teacher_probs)
            .map(|(&pi, &qi)| scale * (pi - qi))
            .collect();
        vec![Some(dz)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Batch mean of `-Σ_k target_k · log softmax(logits)_k`.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let s = self.shape(logits);
        check_logits("soft_cross_entropy", s, target.shape())?;
        let log_probs = log_softmax(self.value(logits).data(), s.c());
        let total = target
            .data()
            .iter()
            .zip(&log_probs)
            .map(|(&t, &l)| -(t * l))
            .sum::<T>();
        let loss = total / T::from_usize(s.n()).unwrap();
        let op = SoftCrossEntropyOp {
            logits,
            target: target.data().to_vec(),
            log_probs,
        };
        self.record(Tensor::scalar(loss), Box::new(op))
    }

    /// Batch mean of `KL(softmax(teacher/τ) ‖ softmax(student/τ))`. The
    /// teacher logits are plain data, so no gradient reaches them.
    pub fn kl_div(&mut self, student: Var, teacher: &Tensor<T>, temperature: T) -> Result<Var> {
        let s = self.shape(student);
        check_logits("kl_div", s, teacher.shape())?;
        if !(temperature > T::zero()) {
            return Err(Error::config("temperature must be positive"));
        }
        let k = s.c();
        let lp = log_softmax(
            &self
                .value(student)
                .data()
                .iter()
                .map(|&v| v / temperature)
                .collect::<Vec<_>>(),
            k,
        );
        let lq = log_softmax(
            &teacher
                .data()
                .iter()
                .map(|&v| v / temperature)
                .collect::<Vec<_>>(),
            k,
        );
        let q: Vec<T> = lq.iter().map(|&v| v.exp()).collect();
        let total = q
            .iter()
            .zip(&lq)
            .zip(&lp)
            .map(|((&qi, &lqi), &lpi)| qi * (lqi - lpi))
            .sum::<T>();
        let loss = total / T::from_usize(s.n()).unwrap();
        self.record(
            Tensor::scalar(loss),
            Box::new(KlDivOp {
                student,
                teacher_probs: q,
                temperature,
            }),
        )
    }
}
