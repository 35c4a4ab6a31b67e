//! Clean and corrupted top-1 error.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::corrupt::{corrupt, CorruptionFamily, CorruptionSpec};
use super::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Anything that maps a batch of images to class predictions.
pub trait Classifier: Sync {
    fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>>;
}

/// Row-wise argmax of `(N,K,1,1)` logits. Ties go to the lowest class.
pub fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    let k = logits.shape().c();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

/// A model with its parameters, run in eval mode.
pub struct ModelClassifier<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore<f32>,
}

impl Classifier for ModelClassifier<'_> {
    fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.model.predict(self.store, x)?))
    }
}

/// Top-1 error in percent, batches evaluated in parallel.
pub fn top1_error(clf: &dyn Classifier, ds: &Dataset, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let wrong: Vec<usize> = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let (x, y) = ds.batch(chunk)?;
            let pred = clf.predict(&x)?;
            Ok(pred.iter().zip(&y).filter(|(p, t)| p != t).count())
        })
        .collect::<Result<_>>()?;
    Ok(100.0 * wrong.iter().sum::<usize>() as f64 / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub clean_error: f64,
    /// Error in percent per `(family, severity)`.
    pub entries: BTreeMap<(CorruptionFamily, u8), f64>,
}

impl RobustnessReport {
    /// Mean over families of the mean over that family's severities.
    pub fn mean_corruption_error(&self) -> Option<f64> {
        let fam = self.family_means();
        (!fam.is_empty()).then(|| fam.values().sum::<f64>() / fam.len() as f64)
    }

    pub fn family_means(&self) -> BTreeMap<CorruptionFamily, f64> {
        let mut acc: BTreeMap<CorruptionFamily, (f64, usize)> = BTreeMap::new();
        for (&(f, _), &e) in &self.entries {
            let a = acc.entry(f).or_default();
            a.0 += e;
            a.1 += 1;
        }
        acc.into_iter()
            .map(|(f, (s, n))| (f, s / n as f64))
            .collect()
    }

    /// Corruption error relative to `baseline`: per family
    /// `100·Σ_s E_{f,s} / Σ_s E^base_{f,s}`, averaged over families.
    pub fn normalized_by(&self, baseline: &RobustnessReport) -> Result<f64> {
        let mut ratios = Vec::new();
        let families: Vec<CorruptionFamily> = self.family_means().into_keys().collect();
        for f in families {
            let mine: f64 = self
                .entries
                .iter()
                .filter(|((g, _), _)| *g == f)
                .map(|(_, e)| e)
                .sum();
            let mut base = 0.0;
            for (&(g, s), _) in self.entries.iter().filter(|((g, _), _)| *g == f) {
                base += baseline.entries.get(&(g, s)).ok_or_else(|| {
                    Error::config(format!("baseline report lacks {g} severity {s}"))
                })?;
            }
            if base <= 0.0 {
                return Err(Error::config(format!("baseline error for {f} is zero")));
            }
            ratios.push(100.0 * mine / base);
        }
        if ratios.is_empty() {
            return Err(Error::config(
                "report has no corruption entries to normalize",
            ));
        }
        Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
    }

    /// `family<TAB>severity<TAB>error` lines, starting with `clean` and
    /// ending with `mce`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("family\tseverity\terror\n");
        writeln!(s, "clean\t0\t{}", self.clean_error).unwrap();
        for (&(f, sev), &e) in &self.entries {
            writeln!(s, "{f}\t{sev}\t{e}").unwrap();
        }
        if let Some(m) = self.mean_corruption_error() {
            writeln!(s, "mce\t-\t{m}").unwrap();
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut clean = None;
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!(
                    "report line {}: expected 3 columns",
                    n + 1
                )));
            }
            let e: f64 = cols[2]
                .parse()
                .map_err(|_| Error::Format(format!("report line {}: bad error", n + 1)))?;
            match cols[0] {
                "clean" => clean = Some(e),
                "mce" => {}
                fam => {
                    let f: CorruptionFamily = fam.parse()?;
                    let sev = cols[1].parse().map_err(|_| {
                        Error::Format(format!("report line {}: bad severity", n + 1))
                    })?;
                    entries.insert((f, sev), e);
                }
            }
        }
        let clean_error = clean.ok_or_else(|| Error::Format("report lacks a clean line".into()))?;
        Ok(RobustnessReport {
            clean_error,
            entries,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("clean error: {:.2}%\n", self.clean_error);
        for (f, m) in self.family_means() {
            let per: Vec<String> = self
                .entries
                .iter()
                .filter(|((g, _), _)| *g == f)
                .map(|(_, e)| format!("{e:6.2}"))
                .collect();
            writeln!(s, "{:<16}{}  mean {m:.2}", f.to_string(), per.join(" ")).unwrap();
        }
        if let Some(m) = self.mean_corruption_error() {
            writeln!(s, "mCE (unnormalized): {m:.2}").unwrap();
        }
        s
    }
}

/// Clean error plus the error under every family × severity. Corrupted
/// copies are built from `seed`, so repeated calls agree bit for bit.
pub fn evaluate(
    clf: &dyn Classifier,
    ds: &Dataset,
    families: &[CorruptionFamily],
    severities: &[u8],
    seed: u64,
    batch_size: usize,
) -> Result<RobustnessReport> {
    let clean_error = top1_error(clf, ds, batch_size)?;
    let mut entries = BTreeMap::new();
    for &family in families {
        for &severity in severities {
            let images = corrupt(&ds.images, &CorruptionSpec::new(family, severity, seed))?;
            let e = top1_error(clf, &ds.with_images(images)?, batch_size)?;
            entries.insert((family, severity), e);
        }
    }
    Ok(RobustnessReport {
        clean_error,
        entries,
    })
}
