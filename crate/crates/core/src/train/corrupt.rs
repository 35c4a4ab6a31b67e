//! Synthetic common corruptions at five severities.
//!
//! | family | parameter | 1 | 2 | 3 | 4 | 5 |
//! |---|---|---|---|---|---|---|
//! | gaussian_noise | σ | 0.08 | 0.12 | 0.18 | 0.26 | 0.38 |
//! | shot_noise | photons λ | 60 | 25 | 12 | 5 | 3 |
//! | impulse_noise | fraction | 0.03 | 0.06 | 0.09 | 0.17 | 0.27 |
//! | defocus_blur | disk radius | 1 | 1.5 | 2 | 3 | 4 |
//! | brightness | shift | 0.1 | 0.2 | 0.3 | 0.4 | 0.5 |
//! | contrast | factor c | 0.4 | 0.3 | 0.2 | 0.1 | 0.05 |
//! | pixelate | block | 2 | 3 | 4 | 6 | 8 |
//! | jpeg | quality | 25 | 18 | 15 | 10 | 7 |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{sub_stream, Stream};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionFamily {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    Brightness,
    Contrast,
    Pixelate,
    Jpeg,
}

impl CorruptionFamily {
    pub const ALL: [CorruptionFamily; 8] = [
        CorruptionFamily::GaussianNoise,
        CorruptionFamily::ShotNoise,
        CorruptionFamily::ImpulseNoise,
        CorruptionFamily::DefocusBlur,
        CorruptionFamily::Brightness,
        CorruptionFamily::Contrast,
        CorruptionFamily::Pixelate,
        CorruptionFamily::Jpeg,
    ];

    /// Severity 1..=5 parameters, ordered from mild to strong distortion.
    pub fn table(self) -> [f64; 5] {
        use CorruptionFamily::*;
        match self {
            GaussianNoise => [0.08, 0.12, 0.18, 0.26, 0.38],
            ShotNoise => [60.0, 25.0, 12.0, 5.0, 3.0],
            ImpulseNoise => [0.03, 0.06, 0.09, 0.17, 0.27],
            DefocusBlur => [1.0, 1.5, 2.0, 3.0, 4.0],
            Brightness => [0.1, 0.2, 0.3, 0.4, 0.5],
            Contrast => [0.4, 0.3, 0.2, 0.1, 0.05],
            Pixelate => [2.0, 3.0, 4.0, 6.0, 8.0],
            Jpeg => [25.0, 18.0, 15.0, 10.0, 7.0],
        }
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&f| f == self).unwrap() as u64
    }
}

impl fmt::Display for CorruptionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CorruptionFamily::*;
        f.write_str(match self {
            GaussianNoise => "gaussian_noise",
            ShotNoise => "shot_noise",
            ImpulseNoise => "impulse_noise",
            DefocusBlur => "defocus_blur",
            Brightness => "brightness",
            Contrast => "contrast",
            Pixelate => "pixelate",
            Jpeg => "jpeg",
        })
    }
}

impl FromStr for CorruptionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let norm = match norm.as_str() {
            "jpeg_like_block" | "jpeg_like" => "jpeg",
            "gaussian" => "gaussian_noise",
            "shot" => "shot_noise",
            "impulse" => "impulse_noise",
            "defocus" => "defocus_blur",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|f| f.to_string() == norm)
            .ok_or_else(|| Error::config(format!("unknown corruption family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub family: CorruptionFamily,
    /// 1..=5; 0 is accepted and means "no corruption".
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(family: CorruptionFamily, severity: u8, seed: u64) -> Self {
        CorruptionSpec {
            family,
            severity,
            seed,
        }
    }

    pub fn parameter(&self) -> Result<Option<f64>> {
        match self.severity {
            0 => Ok(None),
            1..=5 => Ok(Some(self.family.table()[self.severity as usize - 1])),
            s => Err(Error::config(format!("severity {s} outside 0..=5"))),
        }
    }
}

/// Apply one corruption to a batch of images with pixels in `[0,1]`.
/// Deterministic in `(spec, x)`; the result is clamped to `[0,1]`.
pub fn corrupt<T: Scalar>(x: &Tensor<T>, spec: &CorruptionSpec) -> Result<Tensor<T>> {
    if let Some(i) = x
        .data()
        .iter()
        .position(|v| !(*v >= T::zero() && *v <= T::one()))
    {
        return Err(Error::config(format!("pixel {i} outside [0,1]")));
    }
    let Some(p) = spec.parameter()? else {
        return Ok(x.clone());
    };
    let mut rng = sub_stream(
        spec.seed,
        Stream::Corrupt,
        spec.family.index() * 8 + spec.severity as u64,
    );
    let s = x.shape();
    let mut v: Vec<f64> = x.data().iter().map(|v| v.to_f64_lossy()).collect();
    use CorruptionFamily::*;
    match spec.family {
        GaussianNoise => {
            for e in &mut v {
                let z: f64 = StandardNormal.sample(&mut rng);
                *e += p * z;
            }
        }
        ShotNoise => {
            for e in &mut v {
                let rate = *e * p;
                *e = if rate > 0.0 {
                    Poisson::new(rate).unwrap().sample(&mut rng) / p
                } else {
                    0.0
                };
            }
        }
        ImpulseNoise => {
            for e in &mut v {
                let u: f64 = rng.gen();
                let salt: bool = rng.gen();
                if u < p {
                    *e = if salt { 1.0 } else { 0.0 };
                }
            }
        }
        DefocusBlur => {
            for plane in v.chunks_mut(s.plane()) {
                disk_blur(plane, s.h(), s.w(), p);
            }
        }
        Brightness => v.iter_mut().for_each(|e| *e += p),
        Contrast => {
            for plane in v.chunks_mut(s.plane()) {
                let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                plane.iter_mut().for_each(|e| *e = (*e - mean) * p + mean);
            }
        }
        Pixelate => {
            for plane in v.chunks_mut(s.plane()) {
                pixelate(plane, s.h(), s.w(), p as usize);
            }
        }
        Jpeg => {
            let q = quant_table(p);
            for plane in v.chunks_mut(s.plane()) {
                jpeg_roundtrip(plane, s.h(), s.w(), &q);
            }
        }
    }
    let data = v
        .into_iter()
        .map(|e| T::from_f64_lossy(e.clamp(0.0, 1.0)))
        .collect();
    Tensor::from_vec(s, data)
}

/// Mean of a disk of radius `r`, edges replicated.
fn disk_blur(plane: &mut [f64], h: usize, w: usize, r: f64) {
    let reach = r.floor() as isize;
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dy * dy + dx * dx) as f64) <= r * r {
                offsets.push((dy, dx));
            }
        }
    }
    let src = plane.to_vec();
    let norm = offsets.len() as f64;
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = offsets
                .iter()
                .map(|&(dy, dx)| {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    src[yy * w + xx]
                })
                .sum();
            plane[y * w + x] = acc / norm;
        }
    }
}

/// Replace every `b×b` tile (partial at the borders) by its mean.
fn pixelate(plane: &mut [f64], h: usize, w: usize, b: usize) {
    for ty in (0..h).step_by(b) {
        for tx in (0..w).step_by(b) {
            let (y1, x1) = ((ty + b).min(h), (tx + b).min(w));
            let mut acc = 0.0;
            for y in ty..y1 {
                acc += plane[y * w + tx..y * w + x1].iter().sum::<f64>();
            }
            let mean = acc / ((y1 - ty) * (x1 - tx)) as f64;
            for y in ty..y1 {
                plane[y * w + tx..y * w + x1]
                    .iter_mut()
                    .for_each(|e| *e = mean);
            }
        }
    }
}

const LUMA_QUANT: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16.,
    24., 40., 57., 69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109.,
    103., 77., 24., 35., 55., 64., 81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120.,
    101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Standard luminance table scaled by the usual quality rule.
fn quant_table(quality: f64) -> [f64; 64] {
    let scale = if quality < 50.0 {
        5000.0 / quality
    } else {
        200.0 - 2.0 * quality
    };
    LUMA_QUANT.map(|q| ((q * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0.0; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let a = if u == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (x, e) in row.iter_mut().enumerate() {
            *e = a * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
        }
    }
    b
}

/// 8×8 block DCT, quantise, dequantise, inverse DCT, on the 0..255 scale.
fn jpeg_roundtrip(plane: &mut [f64], h: usize, w: usize, q: &[f64; 64]) {
    let basis = dct_basis();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [[0.0; 8]; 8];
            for (i, row) in block.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    let y = (by + i).min(h - 1);
                    let x = (bx + j).min(w - 1);
                    *e = plane[y * w + x] * 255.0 - 128.0;
                }
            }
            let mut coef = [[0.0; 8]; 8];
            for u in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for i in 0..8 {
                        for j in 0..8 {
                            acc += basis[u][i] * basis[v][j] * block[i][j];
                        }
                    }
                    let step = q[u * 8 + v];
                    coef[u][v] = (acc / step).round() * step;
                }
            }
            for i in 0..8.min(h - by) {
                for j in 0..8.min(w - bx) {
                    let mut acc = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            acc += basis[u][i] * basis[v][j] * coef[u][v];
                        }
                    }
                    plane[(by + i) * w + bx + j] = (acc + 128.0) / 255.0;
                }
            }
        }
    }
}
