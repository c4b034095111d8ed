use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cl::{build_stream, Experiment, TaskStream, TrainConfig};
use crate::data::{Generator, Split};
use crate::diagnostics::EigenSettings;
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::optim::{HyperParams, OptimizerConfig, OptimizerKind, PerturbationVariant, Schedule};

/// `[stream]`: how classes are grouped into phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub phases: usize,
    pub classes_per_phase: usize,
    /// Permute class order with this seed; ascending labels when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_seed: Option<u64>,
}

impl Default for StreamSection {
    fn default() -> Self {
        Self {
            phases: 5,
            classes_per_phase: 2,
            order_seed: None,
        }
    }
}

/// `[optimizer]`: kind, first-order variant and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    /// Defaults to the variant the kind implies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<PerturbationVariant>,
    pub lr: f64,
    pub rho: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub c: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            kind: OptimizerKind::default(),
            variant: None,
            lr: hp.lr,
            rho: hp.rho,
            gamma: hp.gamma,
            sigma: hp.sigma,
            lambda0: hp.lambda0,
            lambda1: hp.lambda1,
            c: hp.c,
            momentum: hp.momentum,
            weight_decay: hp.weight_decay,
        }
    }
}

impl OptimizerSection {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            lr: self.lr,
            rho: self.rho,
            gamma: self.gamma,
            sigma: self.sigma,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            c: self.c,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        let base = OptimizerConfig::new(self.kind, self.hyper_params());
        match self.variant {
            Some(v) => base.with_variant(v),
            None => base,
        }
    }
}

/// `[run]`: model, training budget, seeds and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub anchor_strength: f64,
    /// One full run per seed.
    pub seeds: Vec<u64>,
    /// Seed of the synthetic dataset, shared by all runs.
    pub data_seed: u64,
    pub output_dir: PathBuf,
    /// Record a spectrum report after every phase.
    pub spectrum: bool,
    pub eigen: EigenSettings,
    pub hutchinson_samples: usize,
    /// Batches drawn for the Tr(HΣ) estimate.
    pub noise_batches: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
            epochs: train.epochs,
            batch_size: train.batch_size,
            replay_capacity: train.replay_capacity,
            anchor_strength: train.anchor_strength,
            seeds: vec![0],
            data_seed: 0,
            output_dir: PathBuf::from("runs"),
            spectrum: false,
            eigen: EigenSettings::default(),
            hutchinson_samples: 64,
            noise_batches: 32,
        }
    }
}

impl RunSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            anchor_strength: self.anchor_strength,
        }
    }
}

/// A complete experiment description, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Generator,
    #[serde(default)]
    pub stream: StreamSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: Generator::GaussianBlobs {
                classes: 10,
                dim: 16,
                separation: 3.0,
                samples_per_class: 100,
            },
            stream: StreamSection::default(),
            optimizer: OptimizerSection::default(),
            schedule: Schedule::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    /// Range and consistency checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let s = &self.stream;
        if s.phases == 0 {
            return Err(Error::validation("stream.phases", "must be >= 1"));
        }
        if s.classes_per_phase == 0 {
            return Err(Error::validation(
                "stream.classes_per_phase",
                "must be >= 1",
            ));
        }
        if let Some(k) = self.dataset.classes() {
            if s.phases * s.classes_per_phase > k {
                return Err(Error::validation(
                    "stream",
                    format!(
                        "{} phases x {} classes exceeds the {k} classes of the dataset",
                        s.phases, s.classes_per_phase
                    ),
                ));
            }
        }
        if s.classes_per_phase < 2 {
            return Err(Error::validation(
                "stream.classes_per_phase",
                "the first phase needs at least 2 classes for a softmax head",
            ));
        }
        self.optimizer.config().validate()?;
        self.schedule.validate()?;
        self.run.train_config().validate()?;
        let r = &self.run;
        if let Some(i) = r.hidden.iter().position(|&h| h == 0) {
            return Err(Error::validation(
                format!("run.hidden[{i}]"),
                "must be >= 1",
            ));
        }
        if r.seeds.is_empty() {
            return Err(Error::validation("run.seeds", "need at least one seed"));
        }
        if r.eigen.k == 0 || r.eigen.iters == 0 || r.eigen.tol.is_nan() || r.eigen.tol <= 0.0 {
            return Err(Error::validation(
                "run.eigen",
                "need k >= 1, iters >= 1 and tol > 0",
            ));
        }
        if r.hutchinson_samples == 0 {
            return Err(Error::validation("run.hutchinson_samples", "must be >= 1"));
        }
        if r.noise_batches < 2 {
            return Err(Error::validation("run.noise_batches", "must be >= 2"));
        }
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            hidden: self.run.hidden.clone(),
            activation: self.run.activation,
            optimizer: self.optimizer.config(),
            schedule: self.schedule.clone(),
            train: self.run.train_config(),
        }
    }

    pub fn dataset_id(&self) -> String {
        match &self.dataset {
            Generator::GaussianBlobs { .. } => "gaussian-blobs".into(),
            Generator::Spirals { .. } => "spirals".into(),
            Generator::Csv { train, .. } => train.display().to_string(),
        }
    }

    /// Generate or load the dataset named by `[dataset]`.
    pub fn dataset(&self) -> Result<Split> {
        generate_dataset(&self.dataset, self.run.data_seed)
    }

    pub fn stream(&self, total_classes: usize) -> Result<TaskStream> {
        build_stream(
            self.dataset_id(),
            total_classes,
            self.stream.phases,
            self.stream.classes_per_phase,
            self.stream.order_seed,
        )
    }

    /// TOML text that [`parse_config`] reads back to an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic train/test split from a dataset source.
pub fn generate_dataset(generator: &Generator, seed: u64) -> Result<Split> {
    generator.generate(seed)
}

/// Read, override, parse and validate a config file.
///
/// `overrides` are `dotted.key=value` strings; values are parsed as TOML and
/// fall back to plain strings.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path, overrides)
}

pub fn parse_config(text: &str, origin: &Path, overrides: &[String]) -> Result<RunConfig> {
    let parse_err = |message: String| Error::Parse {
        path: origin.to_path_buf(),
        message,
    };
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::validation(assignment, "override must look like section.key=value")
    })?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::validation(key, "empty key segment"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation(key, format!("`{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
