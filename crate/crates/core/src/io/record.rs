use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, RunSection};
use crate::cl::{
    run_continual_with, ContinualOutcome, EpochLog, Learner, MetricsLedger, TaskStream,
};
use crate::data::Dataset;
use crate::diagnostics::{hutchinson_trace, top_eigenpairs, tr_h_sigma_projected, SpectrumReport};
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::oracle::Objective;
use crate::seed::{self, Stream};

/// Everything one seeded run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub ledger: MetricsLedger,
    pub acc: f64,
    pub aaa: f64,
    pub epochs: Vec<EpochLog>,
    /// Per phase.
    pub steps: Vec<usize>,
    /// Per phase.
    pub sharpness_steps: Vec<usize>,
    /// One per phase when spectra were requested; eigenvectors are not kept.
    pub spectra: Vec<SpectrumReport>,
    pub phase_seconds: Vec<f64>,
}

impl RunRecord {
    pub fn from_outcome(
        config: &RunConfig,
        seed: u64,
        outcome: &ContinualOutcome,
        spectra: Vec<SpectrumReport>,
    ) -> Result<Self> {
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: config.clone(),
            acc: outcome.ledger.acc_final()?,
            aaa: outcome.ledger.aaa()?,
            ledger: outcome.ledger.clone(),
            epochs: outcome
                .phases
                .iter()
                .flat_map(|p| p.epochs.iter().cloned())
                .collect(),
            steps: outcome.phases.iter().map(|p| p.steps).collect(),
            sharpness_steps: outcome.phases.iter().map(|p| p.sharpness_steps).collect(),
            spectra: spectra
                .into_iter()
                .map(|mut s| {
                    s.eigenvectors.clear();
                    s
                })
                .collect(),
            phase_seconds: outcome.phase_seconds.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Long-format metric table: accuracy matrix, per-epoch training curves,
    /// then the two summary metrics. Wall-clock time is left out.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,phase,epoch,task,value\n");
        for (p, row) in self.ledger.rows().iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                let _ = writeln!(out, "accuracy,{p},,{t},{v}");
            }
        }
        for e in &self.epochs {
            let _ = writeln!(out, "train_loss,{},{},,{}", e.phase, e.epoch, e.loss);
            let _ = writeln!(
                out,
                "train_accuracy,{},{},,{}",
                e.phase, e.epoch, e.accuracy
            );
        }
        for (p, (s, h)) in self.steps.iter().zip(&self.sharpness_steps).enumerate() {
            let _ = writeln!(out, "steps,{p},,,{s}");
            let _ = writeln!(out, "sharpness_steps,{p},,,{h}");
        }
        let _ = writeln!(out, "acc,,,,{}", self.acc);
        let _ = writeln!(out, "aaa,,,,{}", self.aaa);
        out
    }
}

/// Train one seed of `config`, optionally recording a spectrum after each phase.
pub fn execute_run(config: &RunConfig, seed: u64) -> Result<(RunRecord, ContinualOutcome)> {
    config.validate()?;
    let split = config.dataset()?;
    let stream = config.stream(split.train.classes())?;
    let mut spectra = Vec::new();
    let outcome = run_continual_with(
        &config.experiment(),
        &stream,
        &split,
        seed,
        |phase, learner| {
            if config.run.spectrum {
                spectra.push(phase_spectrum(
                    learner,
                    &split.train,
                    &stream,
                    phase,
                    &config.run,
                    seed,
                )?);
            }
            Ok(())
        },
    )?;
    let record = RunRecord::from_outcome(config, seed, &outcome, spectra)?;
    Ok((record, outcome))
}

/// Disjoint minibatches of phase `phase`'s training rows, at most `count` of them.
pub fn phase_batches(
    train: &Dataset,
    stream: &TaskStream,
    phase: usize,
    batch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    let mut rows = train.indices_of(&stream.phases()[phase]);
    rows.shuffle(&mut seed::rng(
        seed,
        Stream::Probe,
        (2 << 32) + phase as u64,
    ));
    // Shrink the batch if the task is too small for two full ones.
    let size = batch_size.min(rows.len() / 2).max(1);
    let head = |y: usize| stream.head_index(y).expect("streamed class");
    rows.chunks_exact(size)
        .take(count)
        .map(|chunk| train.batch(chunk, head))
        .collect()
}

/// Eigenpairs and trace on the pooled phase batches, plus Tr(HΣ) from their
/// per-batch gradients.
pub fn phase_spectrum(
    learner: &Learner,
    train: &Dataset,
    stream: &TaskStream,
    phase: usize,
    run: &RunSection,
    seed: u64,
) -> Result<SpectrumReport> {
    let batches = phase_batches(
        train,
        stream,
        phase,
        run.batch_size,
        run.noise_batches,
        seed,
    )?;
    let oracle = learner.oracle()?;
    let w = &learner.params;
    let pooled = Batch::concat(&batches)?;
    let mut eigen = run.eigen;
    eigen.k = eigen.k.min(w.len());
    let mut report = top_eigenpairs(&oracle, w, &pooled, eigen, seed)?;
    report.trace = Some(hutchinson_trace(
        &oracle,
        w,
        &pooled,
        run.hutchinson_samples,
        seed,
    )?);
    if batches.len() >= 2 {
        let grads = batches
            .iter()
            .map(|b| oracle.grad(w, b))
            .collect::<Result<Vec<_>>>()?;
        report.tr_h_sigma =
            Some(tr_h_sigma_projected(&report.eigenvalues, &report.eigenvectors, &grads)?.value);
    }
    Ok(report)
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock {
    path: PathBuf,
    _file: File,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join("run.lock");
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Write `run.json`, `metrics.csv` and `spectrum_phase{p}.csv` under `dir`,
/// creating it if needed. Returns the manifest path.
pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let _lock = DirLock::acquire(dir)?;
    let manifest = dir.join("run.json");
    write(manifest.clone(), &record.to_json()?)?;
    write(dir.join("metrics.csv"), &record.metrics_csv())?;
    for (p, s) in record.spectra.iter().enumerate() {
        write(dir.join(format!("spectrum_phase{p}.csv")), &s.to_csv())?;
    }
    Ok(manifest)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
