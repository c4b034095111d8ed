//! Labeled datasets: synthetic generators, stratified splits and CSV ingestion.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::seed::{self, Stream};

/// Row-major feature matrix with integer labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Dataset(format!(
                "{} values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Dataset(format!("label {y} outside [0, {classes})")));
        }
        Ok(Self {
            inputs,
            dim,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Row indices whose label is in `classes`.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect()
    }

    /// Batch of the given rows with labels passed through `map`.
    pub fn batch(&self, rows: &[usize], map: impl Fn(usize) -> usize) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            inputs.extend_from_slice(self.row(r));
            labels.push(map(self.labels[r]));
        }
        Batch::new(inputs, self.dim, labels)
    }

    /// Widen the declared class count (e.g. to agree with a paired split).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some(&y) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Dataset(format!("label {y} outside [0, {classes})")));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            inputs.extend_from_slice(self.row(r));
        }
        Dataset {
            inputs,
            dim: self.dim,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        }
    }

    /// Per class, the first 80% of a seeded shuffle go to train, the rest to test.
    pub fn stratified_split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..self.classes {
            let mut rows = self.indices_of(&[class]);
            rows.shuffle(&mut seed::rng(seed, Stream::Dataset, 1_000 + class as u64));
            let cut = (rows.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&rows[..cut]);
            test.extend_from_slice(&rows[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        for i in 0..self.len() {
            let mut record: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            record.push(self.labels[i].to_string());
            w.write_record(&record)
                .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Header-free `f_0,…,f_{d−1},label` rows.
    pub fn from_csv(path: &Path) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
            if rec.len() < 2 {
                return Err(Error::Dataset(format!(
                    "{}:{}: need at least one feature and a label",
                    path.display(),
                    line + 1
                )));
            }
            let d = rec.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::Dataset(format!(
                    "{}:{}: ragged row",
                    path.display(),
                    line + 1
                )));
            }
            for field in rec.iter().take(d) {
                inputs.push(field.parse::<f64>().map_err(|e| {
                    Error::Dataset(format!(
                        "{}:{}: bad feature `{field}`: {e}",
                        path.display(),
                        line + 1
                    ))
                })?);
            }
            let label = &rec[d];
            labels.push(label.parse::<usize>().map_err(|e| {
                Error::Dataset(format!(
                    "{}:{}: bad label `{label}`: {e}",
                    path.display(),
                    line + 1
                ))
            })?);
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Dataset::new(inputs, dim.unwrap_or(0), labels, classes)
    }
}

/// Train/test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Dataset source: a synthetic generator or a pair of CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// Isotropic unit-variance clouds around random centers at distance `separation`.
    GaussianBlobs {
        classes: usize,
        dim: usize,
        separation: f64,
        #[serde(default = "default_samples")]
        samples_per_class: usize,
    },
    /// Interleaved 2-D spiral arms.
    Spirals {
        classes: usize,
        noise: f64,
        #[serde(default = "default_samples")]
        samples_per_class: usize,
    },
    /// Pre-split header-free CSV files.
    Csv { train: PathBuf, test: PathBuf },
}

fn default_samples() -> usize {
    100
}

impl Generator {
    /// Class count, when known without reading files.
    pub fn classes(&self) -> Option<usize> {
        match self {
            Generator::GaussianBlobs { classes, .. } | Generator::Spirals { classes, .. } => {
                Some(*classes)
            }
            Generator::Csv { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (classes, spc) = match self {
            Generator::GaussianBlobs {
                classes,
                dim,
                separation,
                samples_per_class,
            } => {
                if *dim == 0 {
                    return Err(Error::validation("dataset.dim", "must be positive"));
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(Error::validation(
                        "dataset.separation",
                        "must be finite and >= 0",
                    ));
                }
                (*classes, *samples_per_class)
            }
            Generator::Spirals {
                classes,
                noise,
                samples_per_class,
            } => {
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(Error::validation(
                        "dataset.noise",
                        "must be finite and >= 0",
                    ));
                }
                (*classes, *samples_per_class)
            }
            Generator::Csv { .. } => return Ok(()),
        };
        if classes < 2 {
            return Err(Error::validation(
                "dataset.classes",
                "need at least 2 classes",
            ));
        }
        if spc < 2 {
            return Err(Error::validation(
                "dataset.samples_per_class",
                "need at least 2 samples per class",
            ));
        }
        Ok(())
    }

    /// Deterministic dataset with a stratified 80/20 split. CSV sources are
    /// read as given and `seed` is unused.
    pub fn generate(&self, seed: u64) -> Result<Split> {
        self.validate()?;
        let full = match *self {
            Generator::GaussianBlobs {
                classes,
                dim,
                separation,
                samples_per_class,
            } => blobs(classes, dim, separation, samples_per_class, seed)?,
            Generator::Spirals {
                classes,
                noise,
                samples_per_class,
            } => spirals(classes, noise, samples_per_class, seed)?,
            Generator::Csv {
                ref train,
                ref test,
            } => {
                let (train, test) = (Dataset::from_csv(train)?, Dataset::from_csv(test)?);
                if train.dim() != test.dim() {
                    return Err(Error::Dataset(format!(
                        "train has {} features but test has {}",
                        train.dim(),
                        test.dim()
                    )));
                }
                let classes = train.classes().max(test.classes());
                if classes < 2 {
                    return Err(Error::Dataset("CSV data holds fewer than 2 classes".into()));
                }
                return Ok(Split {
                    train: train.with_classes(classes)?,
                    test: test.with_classes(classes)?,
                });
            }
        };
        let (train, test) = full.stratified_split(0.8, seed);
        Ok(Split { train, test })
    }
}

fn blobs(
    classes: usize,
    dim: usize,
    separation: f64,
    per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for k in 0..classes {
        let mut rng = seed::rng(seed, Stream::Dataset, k as u64);
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let center: Vec<f64> = dir.iter().map(|x| separation * x / norm).collect();
        for _ in 0..per_class {
            for c in &center {
                let e: f64 = StandardNormal.sample(&mut rng);
                inputs.push(c + e);
            }
            labels.push(k);
        }
    }
    Dataset::new(inputs, dim, labels, classes)
}

fn spirals(classes: usize, noise: f64, per_class: usize, seed: u64) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(classes * per_class * 2);
    let mut labels = Vec::with_capacity(classes * per_class);
    for k in 0..classes {
        let mut rng = seed::rng(seed, Stream::Dataset, k as u64);
        let offset = std::f64::consts::TAU * k as f64 / classes as f64;
        for i in 0..per_class {
            let r = (i as f64 + 0.5) / per_class as f64;
            let theta = offset + 4.0 * r + noise * rng.sample::<f64, _>(StandardNormal);
            inputs.push(r * theta.cos());
            inputs.push(r * theta.sin());
            labels.push(k);
        }
    }
    Dataset::new(inputs, 2, labels, classes)
}
