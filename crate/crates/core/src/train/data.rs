//! Labelled image sets: in memory, on disk, and synthetic.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::{Shape, Tensor};

pub const MANIFEST: &str = "manifest.tsv";

/// Images stacked into one `(N,C,H,W)` tensor with one label each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().n() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} images, {} labels", images.shape().n(), labels.len()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> Shape {
        self.images.shape().with_n(1)
    }

    /// Gather `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let s = self.sample_shape();
        let mut data = Vec::with_capacity(indices.len() * s.numel());
        for &i in indices {
            data.extend_from_slice(self.images.sample(i));
        }
        let x = Tensor::from_vec(s.with_n(indices.len()), data)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.batch(indices)?;
        Dataset::new(images, labels, self.num_classes)
    }

    /// Same labels, different pixels.
    pub fn with_images(&self, images: Tensor<f32>) -> Result<Dataset> {
        Dataset::new(images, self.labels.clone(), self.num_classes)
    }
}

/// Write `class{label}/{index}.rbt` files and a `manifest.tsv` of
/// `path<TAB>label` lines.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST))?);
    for i in 0..ds.len() {
        let label = ds.labels[i];
        let rel = format!("class{label}/{i:06}.rbt");
        let path = dir.join(&rel);
        fs::create_dir_all(path.parent().unwrap())?;
        let mut f = BufWriter::new(fs::File::create(&path)?);
        ds.images.sample_tensor(i).write_to(&mut f)?;
        f.flush()?;
        writeln!(manifest, "{rel}\t{label}")?;
    }
    manifest.flush()?;
    Ok(())
}

fn manifest_entries(dir: &Path) -> Result<Vec<(PathBuf, usize)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::config(format!(
            "cannot read dataset manifest {}: {e}",
            path.display()
        ))
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (file, label) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!(
                "{}:{}: expected path<TAB>label",
                path.display(),
                n + 1
            ))
        })?;
        let label = label.trim().parse().map_err(|_| {
            Error::Format(format!("{}:{}: bad label `{label}`", path.display(), n + 1))
        })?;
        out.push((dir.join(file), label));
    }
    Ok(out)
}

/// Read a directory written by [`save_dataset`] (or any tree with a
/// matching manifest). The class count is `max label + 1` unless given.
pub fn load_dataset(dir: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let entries = manifest_entries(dir)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut images = Vec::with_capacity(entries.len());
    for (path, _) in &entries {
        let mut r = BufReader::new(fs::File::open(path)?);
        let t = Tensor::<f32>::read_from(&mut r)?;
        if t.shape().n() != 1 {
            return Err(Error::Format(format!(
                "{}: expected one image, found shape {}",
                path.display(),
                t.shape()
            )));
        }
        images.push(t);
    }
    let refs: Vec<&Tensor<f32>> = images.iter().collect();
    let stacked = Tensor::stack(&refs)?;
    let labels: Vec<usize> = entries.iter().map(|e| e.1).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    Dataset::new(stacked, labels, classes)
}

/// A learnable toy problem: each class is a smooth random colour pattern.
/// A sample is its class pattern, circularly shifted by a random offset,
/// with random contrast and brightness jitter and Gaussian pixel noise,
/// clipped to `[0,1]`. Labels are balanced and shuffled.
pub fn synthetic(
    n: usize,
    classes: usize,
    resolution: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || resolution == 0 {
        return Err(Error::config(
            "synthetic data needs at least one class and one pixel",
        ));
    }
    let mut rng = stream(seed, Stream::Data);
    let r = resolution as f64;
    let prototypes: Vec<Tensor<f32>> = (0..classes)
        .map(|_| {
            let waves: Vec<[f64; 4]> = (0..9)
                .map(|_| {
                    [
                        rng.gen_range(0.5..3.0),
                        rng.gen_range(0.5..3.0),
                        rng.gen_range(0.0..6.3),
                        rng.gen_range(-0.25..0.25),
                    ]
                })
                .collect();
            Tensor::from_fn(Shape::new(1, 3, resolution, resolution), |[_, c, y, x]| {
                let v: f64 = waves[c * 3..c * 3 + 3]
                    .iter()
                    .map(|[fy, fx, ph, amp]| {
                        amp * (fy * y as f64 / r * 6.3 + fx * x as f64 / r * 6.3 + ph).sin()
                    })
                    .sum();
                (0.5 + v) as f32
            })
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let per = 3 * resolution * resolution;
    let mut data = Vec::with_capacity(n * per);
    for &l in &labels {
        let (dy, dx) = (rng.gen_range(0..resolution), rng.gen_range(0..resolution));
        let gain = rng.gen_range(0.6..1.4);
        let offset = rng.gen_range(-0.1..0.1);
        let proto = &prototypes[l];
        for c in 0..3 {
            for y in 0..resolution {
                for x in 0..resolution {
                    let p = proto.at([0, c, (y + dy) % resolution, (x + dx) % resolution]) as f64;
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    data.push((0.5 + gain * (p - 0.5) + offset + noise * z).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Dataset::new(
        Tensor::from_vec(Shape::new(n, 3, resolution, resolution), data)?,
        labels,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_round_trip() {
        let ds = synthetic(12, 3, 8, 0.1, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path(), Some(3)).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.images.data(), ds.images.data());
        assert!(dir.path().join("class0").is_dir());
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), None),
            Err(Error::EmptyDataset)
        ));
        let missing = dir.path().join("nope");
        assert!(load_dataset(&missing, None).unwrap_err().is_config_error());
    }

    #[test]
    fn synthetic_is_balanced_bounded_and_seeded() {
        let a = synthetic(100, 10, 8, 0.2, 1).unwrap();
        let b = synthetic(100, 10, 8, 0.2, 1).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        for c in 0..10 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
