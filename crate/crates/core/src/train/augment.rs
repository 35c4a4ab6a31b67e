//! Batch-level MixUp/CutMix and per-sample random erasing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::nn::one_hot;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKind {
    None,
    Mixup,
    Cutmix,
}

/// Half-open pixel rectangle `[top, top+height) × [left, left+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y)
            && (self.left..self.left + self.width).contains(&x)
    }
}

/// A mixed batch. Sample `i` carries weight `lambda` on its own label and
/// `1 - lambda` on the label of sample `perm[i]`.
#[derive(Debug, Clone)]
pub struct Mixed<T: Scalar> {
    pub x: Tensor<T>,
    pub perm: Vec<usize>,
    pub lambda: f64,
    pub kind: MixKind,
}

impl<T: Scalar> Mixed<T> {
    /// `λ·onehot(y) + (1−λ)·onehot(y[perm])`, each smoothed by `smoothing`.
    /// Cross-entropy is linear in the target, so this equals
    /// `λ·CE(y) + (1−λ)·CE(y_perm)`.
    pub fn targets(&self, labels: &[usize], classes: usize, smoothing: f64) -> Result<Tensor<T>> {
        let a = one_hot::<T>(labels, classes, smoothing)?;
        if self.kind == MixKind::None {
            return Ok(a);
        }
        let permuted: Vec<usize> = self.perm.iter().map(|&j| labels[j]).collect();
        let b = one_hot::<T>(&permuted, classes, smoothing)?;
        let lam = T::from_f64_lossy(self.lambda);
        let rest = T::from_f64_lossy(1.0 - self.lambda);
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| lam * p + rest * q)
            .collect();
        Tensor::from_vec(a.shape(), data)
    }

    /// Label the sample counts toward when scoring training accuracy.
    pub fn dominant_label(&self, labels: &[usize], i: usize) -> usize {
        if self.lambda >= 0.5 {
            labels[i]
        } else {
            labels[self.perm[i]]
        }
    }
}

fn check_perm(n: usize, perm: &[usize]) -> Result<()> {
    if perm.len() != n || perm.iter().any(|&j| j >= n) {
        return Err(Error::config(format!(
            "permutation of length {} does not index a batch of {n}",
            perm.len()
        )));
    }
    Ok(())
}

/// `x ← λx + (1−λ)x[perm]`.
pub fn mixup_with<T: Scalar>(x: &Tensor<T>, perm: &[usize], lambda: f64) -> Result<Tensor<T>> {
    check_perm(x.shape().n(), perm)?;
    let lam = T::from_f64_lossy(lambda);
    let rest = T::from_f64_lossy(1.0 - lambda);
    let mut out = x.clone();
    for (i, &j) in perm.iter().enumerate() {
        for (o, &b) in out.sample_mut(i).iter_mut().zip(x.sample(j)) {
            *o = lam * *o + rest * b;
        }
    }
    Ok(out)
}

/// Paste `rect` of `x[perm[i]]` into sample `i`. Returns the batch and
/// `λ = 1 − area/(H·W)`.
pub fn cutmix_with<T: Scalar>(
    x: &Tensor<T>,
    perm: &[usize],
    rect: Rect,
) -> Result<(Tensor<T>, f64)> {
    let s = x.shape();
    check_perm(s.n(), perm)?;
    if rect.top + rect.height > s.h() || rect.left + rect.width > s.w() {
        return Err(Error::config(format!(
            "cut region {rect:?} exceeds {}x{}",
            s.h(),
            s.w()
        )));
    }
    let mut out = x.clone();
    for (i, &j) in perm.iter().enumerate() {
        for c in 0..s.c() {
            for y in rect.top..rect.top + rect.height {
                for xx in rect.left..rect.left + rect.width {
                    let v = x.at([j, c, y, xx]);
                    let k = out.index([i, c, y, xx]);
                    out.data_mut()[k] = v;
                }
            }
        }
    }
    let lambda = 1.0 - rect.area() as f64 / s.plane() as f64;
    Ok((out, lambda))
}

fn sample_beta(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::config(format!("beta({alpha}): {e}")))?;
    Ok(beta.sample(rng))
}

/// Box covering a `1−λ` fraction of the image, centred uniformly at random
/// and clipped to the borders.
fn cut_rect(h: usize, w: usize, lambda: f64, rng: &mut impl Rng) -> Rect {
    let ratio = (1.0 - lambda).sqrt();
    let ch = (h as f64 * ratio) as usize;
    let cw = (w as f64 * ratio) as usize;
    let cy = rng.gen_range(0..h);
    let cx = rng.gen_range(0..w);
    let top = cy.saturating_sub(ch / 2);
    let left = cx.saturating_sub(cw / 2);
    let bottom = (cy + ch / 2).min(h);
    let right = (cx + cw / 2).min(w);
    Rect {
        top,
        left,
        height: bottom - top,
        width: right - left,
    }
}

/// Pick MixUp or CutMix with equal odds (or whichever has a positive
/// alpha) and mix the batch with a random permutation of itself.
pub fn mixup_cutmix<T: Scalar>(
    x: &Tensor<T>,
    mixup_alpha: f64,
    cutmix_alpha: f64,
    rng: &mut impl Rng,
) -> Result<Mixed<T>> {
    let n = x.shape().n();
    if n < 2 {
        return Err(Error::config(format!(
            "mixing needs a batch of at least 2, got {n}"
        )));
    }
    if mixup_alpha < 0.0 || cutmix_alpha < 0.0 {
        return Err(Error::config("mixing alphas must be non-negative"));
    }
    let use_cutmix = match (mixup_alpha > 0.0, cutmix_alpha > 0.0) {
        (false, false) => {
            return Ok(Mixed {
                x: x.clone(),
                perm: (0..n).collect(),
                lambda: 1.0,
                kind: MixKind::None,
            });
        }
        (true, true) => rng.gen_bool(0.5),
        (m, _) => !m,
    };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    if use_cutmix {
        let lam = sample_beta(cutmix_alpha, rng)?;
        let rect = cut_rect(x.shape().h(), x.shape().w(), lam, rng);
        let (mixed, lambda) = cutmix_with(x, &perm, rect)?;
        Ok(Mixed {
            x: mixed,
            perm,
            lambda,
            kind: MixKind::Cutmix,
        })
    } else {
        let lambda = sample_beta(mixup_alpha, rng)?;
        Ok(Mixed {
            x: mixup_with(x, &perm, lambda)?,
            perm,
            lambda,
            kind: MixKind::Mixup,
        })
    }
}

const ERASE_AREA: (f64, f64) = (0.02, 1.0 / 3.0);
const ERASE_ASPECT: (f64, f64) = (0.3, 3.3);
const ERASE_ATTEMPTS: usize = 10;

fn erase_rect(h: usize, w: usize, rng: &mut impl Rng) -> Rect {
    let area = (h * w) as f64;
    for _ in 0..ERASE_ATTEMPTS {
        let target = area * rng.gen_range(ERASE_AREA.0..ERASE_AREA.1);
        let aspect = rng
            .gen_range(ERASE_ASPECT.0.ln()..ERASE_ASPECT.1.ln())
            .exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh >= 1 && ew >= 1 && eh <= h && ew <= w {
            let top = rng.gen_range(0..=h - eh);
            let left = rng.gen_range(0..=w - ew);
            return Rect {
                top,
                left,
                height: eh,
                width: ew,
            };
        }
    }
    // Square of the smallest allowed area, so every draw erases something.
    let side = ((area * ERASE_AREA.0).sqrt().round() as usize).clamp(1, h.min(w));
    let top = rng.gen_range(0..=h - side);
    let left = rng.gen_range(0..=w - side);
    Rect {
        top,
        left,
        height: side,
        width: side,
    }
}

/// With probability `prob` per sample, fill one random rectangle (2–33% of
/// the area, aspect 0.3–3.3) with uniform noise in `[0,1)`. Returns the
/// rectangle chosen for each sample.
pub fn random_erasing<T: Scalar>(
    x: &mut Tensor<T>,
    prob: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Option<Rect>>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::config(format!(
            "erase probability {prob} outside [0,1]"
        )));
    }
    let s = x.shape();
    let mut rects = Vec::with_capacity(s.n());
    for n in 0..s.n() {
        if prob == 0.0 || !rng.gen_bool(prob) {
            rects.push(None);
            continue;
        }
        let r = erase_rect(s.h(), s.w(), rng);
        for c in 0..s.c() {
            for y in r.top..r.top + r.height {
                for xx in r.left..r.left + r.width {
                    let k = x.index([n, c, y, xx]);
                    x.data_mut()[k] = T::from_f64_lossy(rng.gen::<f64>());
                }
            }
        }
        rects.push(Some(r));
    }
    Ok(rects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(Shape::new(n, 3, 32, 32), 0.0, 1.0, &mut rng)
    }

    #[test]
    fn lambda_one_is_identity() {
        let x = batch(4, 0);
        let y = mixup_with(&x, &[3, 2, 1, 0], 1.0).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn half_mix_with_reverse_is_pairwise_mean() {
        let x = batch(4, 1);
        let y = mixup_with(&x, &[3, 2, 1, 0], 0.5).unwrap();
        for i in 0..4 {
            for (k, &v) in y.sample(i).iter().enumerate() {
                let want = 0.5 * x.sample(i)[k] + 0.5 * x.sample(3 - i)[k];
                assert!((v - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cutmix_quarter_area() {
        let x = batch(2, 2);
        let rect = Rect {
            top: 8,
            left: 4,
            height: 16,
            width: 16,
        };
        let (y, lam) = cutmix_with(&x, &[1, 0], rect).unwrap();
        assert_eq!(lam, 0.75);
        assert_eq!(y.at([0, 1, 10, 10]), x.at([1, 1, 10, 10]));
        assert_eq!(y.at([0, 1, 0, 0]), x.at([0, 1, 0, 0]));
    }

    #[test]
    fn mixed_targets_weight_both_labels() {
        let m = Mixed::<f64> {
            x: batch(2, 3),
            perm: vec![1, 0],
            lambda: 0.75,
            kind: MixKind::Cutmix,
        };
        let t = m.targets(&[0, 2], 3, 0.0).unwrap();
        assert_eq!(t.data(), &[0.75, 0.0, 0.25, 0.25, 0.0, 0.75]);
        assert_eq!(m.dominant_label(&[0, 2], 0), 0);
    }

    #[test]
    fn batch_of_one_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mixup_cutmix(&batch(1, 0), 0.8, 1.0, &mut rng).is_err());
    }

    #[test]
    fn erasing_prob_zero_is_identity() {
        let x = batch(8, 4);
        let mut y = x.clone();
        let rects = random_erasing(&mut y, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(rects.iter().all(Option::is_none));
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn erasing_prob_one_touches_exactly_one_rectangle() {
        let x = batch(64, 5);
        let mut y = x.clone();
        let rects = random_erasing(&mut y, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (n, r) in rects.iter().enumerate() {
            let r = r.expect("every sample erased");
            let frac = r.area() as f64 / 1024.0;
            assert!((0.015..=0.34).contains(&frac), "area fraction {frac}");
            for c in 0..3 {
                for yy in 0..32 {
                    for xx in 0..32 {
                        if !r.contains(yy, xx) {
                            assert_eq!(x.at([n, c, yy, xx]), y.at([n, c, yy, xx]));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn erasing_rate_matches_probability() {
        let mut x = Tensor::<f32>::zeros(Shape::new(10_000, 1, 8, 8));
        let rects = random_erasing(&mut x, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let rate = rects.iter().filter(|r| r.is_some()).count() as f64 / 10_000.0;
        assert!((rate - 0.25).abs() < 0.02, "rate {rate}");
    }

    proptest! {
        #[test]
        fn mixed_pixels_stay_between_sources(seed in 0u64..500, mix in 0.0f64..2.0, cut in 0.0f64..2.0) {
            let x = batch(4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = mixup_cutmix(&x, mix, cut, &mut rng).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.lambda));
            for i in 0..4 {
                let j = m.perm[i];
                for (k, &v) in m.x.sample(i).iter().enumerate() {
                    let (a, b) = (x.sample(i)[k], x.sample(j)[k]);
                    prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
                }
            }
        }
    }
}
