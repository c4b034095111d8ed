use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsLedger;
use super::replay::ReplayBuffer;
use super::stream::TaskStream;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{grow_head, init_params, Activation, ModelSpec};
use crate::optim::{self, OptimizerConfig, OptimizerKind, OptimizerState, Schedule};
use crate::oracle::{Anchor, MlpLoss};
use crate::param::ParamVector;
use crate::seed::{self, Stream};

/// Per-phase training budget and continual-learning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Epochs per phase.
    pub epochs: usize,
    pub batch_size: usize,
    /// Replay exemplar budget; 0 is plain fine-tuning.
    pub replay_capacity: usize,
    /// Strength of the ℓ2 anchor to the previous phase's parameters; 0 disables it.
    pub anchor_strength: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            replay_capacity: 200,
            anchor_strength: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("run.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("run.batch_size", "must be >= 1"));
        }
        if !(self.anchor_strength >= 0.0 && self.anchor_strength.is_finite()) {
            return Err(Error::validation(
                "run.anchor_strength",
                format!("must be finite and >= 0, got {}", self.anchor_strength),
            ));
        }
        Ok(())
    }
}

/// Everything except data and seed that determines a continual run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub train: TrainConfig,
}

/// Model, parameters and optimizer state carried across phases.
#[derive(Debug, Clone)]
pub struct Learner {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub state: OptimizerState,
    phases_trained: usize,
}

impl Learner {
    /// Fresh model whose head covers `classes` outputs.
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = ModelSpec::new(input_dim, hidden, classes, activation, seed);
        spec.validate()?;
        let params = init_params(&spec)?;
        let state = OptimizerState::new(params.layout(), seed);
        Ok(Self {
            spec,
            params,
            state,
            phases_trained: 0,
        })
    }

    pub fn phases_trained(&self) -> usize {
        self.phases_trained
    }

    pub fn oracle(&self) -> Result<MlpLoss> {
        MlpLoss::new(self.spec.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: usize,
    /// 1-based within the phase.
    pub epoch: usize,
    pub lr: f64,
    pub sharpness_active: bool,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Accuracy on the phase's training pool after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: usize,
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    /// Steps that ran the sharpness-aware update rather than plain SGD.
    pub sharpness_steps: usize,
    pub pool_size: usize,
}

/// Train `learner` on phase `phase` of `stream`.
///
/// The head grows to all classes seen so far, optimizer trackers restart, and
/// the pool is the phase's training rows plus the replay exemplars. Afterwards
/// the buffer absorbs the new classes.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    stream: &TaskStream,
    phase: usize,
    learner: &mut Learner,
    train: &Dataset,
    experiment: &Experiment,
    replay: &mut ReplayBuffer,
    seed: u64,
) -> Result<PhaseLog> {
    if phase >= stream.len() {
        return Err(Error::InvalidArgument(format!(
            "phase {phase} out of range for a {}-phase stream",
            stream.len()
        )));
    }
    if learner.phases_trained != phase {
        return Err(Error::InvalidArgument(format!(
            "phase {phase} requested but {} phases trained",
            learner.phases_trained
        )));
    }
    let seen = stream.seen_classes(phase);
    let (prev_spec, previous) = (learner.spec.clone(), learner.params.clone());
    if seen.len() > learner.spec.classes {
        let (spec, params) = grow_head(&learner.spec, &learner.params, seen.len())?;
        learner.spec = spec;
        learner.params = params;
    }
    learner.state.reset_for_task(learner.params.layout());

    let mut oracle = MlpLoss::new(learner.spec.clone())?;
    if phase > 0 && experiment.train.anchor_strength > 0.0 {
        let (_, center) = grow_head(&prev_spec, &previous, seen.len())?;
        oracle = oracle.with_anchor(Anchor {
            center: center.into_vec(),
            weight: vec![1.0; learner.params.len()],
            strength: experiment.train.anchor_strength,
        })?;
    }

    let pool = training_pool(stream, phase, train, replay)?;
    let head = |label: usize| {
        stream
            .head_index(label)
            .expect("pool holds only streamed classes")
    };
    let sgd_config = OptimizerConfig::new(OptimizerKind::Sgd, experiment.optimizer.hp);

    let epochs = experiment.train.epochs;
    let mut log = PhaseLog {
        phase,
        epochs: Vec::with_capacity(epochs),
        steps: 0,
        sharpness_steps: 0,
        pool_size: pool.len(),
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 1..=epochs {
        learner.state.epoch_in_task = epoch;
        let sched = experiment.schedule.at(
            epoch,
            epochs,
            experiment.optimizer.hp.lr,
            experiment.optimizer.hp.rho,
        );
        let mut config = if sched.sharpness_active {
            experiment.optimizer
        } else {
            sgd_config
        };
        config.hp.lr = sched.lr;
        config.hp.rho = sched.rho;

        order.shuffle(&mut seed::rng(
            seed,
            Stream::Shuffle,
            ((phase as u64) << 32) | epoch as u64,
        ));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(experiment.train.batch_size) {
            let batch = pool.batch(rows, head)?;
            let (next, report) = optim::step(
                &oracle,
                &learner.params,
                &batch,
                &mut learner.state,
                &config,
            )
            .map_err(|e| Error::Aborted {
                phase,
                epoch,
                step: log.steps,
                source: Box::new(e),
            })?;
            learner.params = next;
            loss_sum += report.loss;
            batches += 1;
            log.steps += 1;
            log.sharpness_steps += usize::from(report.sharpness);
        }
        let all: Vec<usize> = (0..pool.len()).collect();
        let accuracy = accuracy(&oracle, &learner.params, &pool, &all, &head)?;
        log.epochs.push(EpochLog {
            phase,
            epoch,
            lr: sched.lr,
            sharpness_active: sched.sharpness_active,
            loss: loss_sum / batches as f64,
            accuracy,
        });
    }

    replay.update(phase, &stream.phases()[phase], &seen, train);
    learner.phases_trained += 1;
    Ok(log)
}

fn training_pool(
    stream: &TaskStream,
    phase: usize,
    train: &Dataset,
    replay: &ReplayBuffer,
) -> Result<Dataset> {
    let rows = train.indices_of(&stream.phases()[phase]);
    if rows.is_empty() {
        return Err(Error::Dataset(format!(
            "no training rows for phase {phase}"
        )));
    }
    let current = train.subset(&rows);
    if replay.is_empty() {
        return Ok(current);
    }
    let mut inputs = Vec::with_capacity((current.len() + replay.len()) * train.dim());
    let mut labels = Vec::with_capacity(current.len() + replay.len());
    for i in 0..current.len() {
        inputs.extend_from_slice(current.row(i));
        labels.push(current.labels()[i]);
    }
    for e in replay.exemplars() {
        inputs.extend_from_slice(&e.input);
        labels.push(e.label);
    }
    Dataset::new(inputs, train.dim(), labels, train.classes())
}

fn accuracy(
    oracle: &MlpLoss,
    w: &ParamVector,
    data: &Dataset,
    rows: &[usize],
    head: &impl Fn(usize) -> usize,
) -> Result<f64> {
    let batch = data.batch(rows, head)?;
    let predicted = oracle.predict(w, &batch)?;
    let hits = predicted
        .iter()
        .zip(batch.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Test accuracy on each task `0..=up_to`, predicting over every class seen so far.
pub fn evaluate(
    oracle: &MlpLoss,
    w: &ParamVector,
    stream: &TaskStream,
    up_to: usize,
    test: &Dataset,
) -> Result<Vec<f64>> {
    if up_to >= stream.len() {
        return Err(Error::InvalidArgument(format!(
            "phase {up_to} out of range"
        )));
    }
    let head = |label: usize| stream.head_index(label).unwrap_or(usize::MAX);
    stream.phases()[..=up_to]
        .iter()
        .enumerate()
        .map(|(t, classes)| {
            let rows = test.indices_of(classes);
            if rows.is_empty() {
                return Err(Error::Dataset(format!("no test rows for task {t}")));
            }
            accuracy(oracle, w, test, &rows, &head)
        })
        .collect()
}

/// Result of training through every phase of a stream.
#[derive(Debug, Clone)]
pub struct ContinualOutcome {
    pub ledger: MetricsLedger,
    pub phases: Vec<PhaseLog>,
    pub learner: Learner,
    pub replay: ReplayBuffer,
    /// Wall-clock seconds per phase (training and evaluation).
    pub phase_seconds: Vec<f64>,
}

impl ContinualOutcome {
    pub fn sharpness_steps(&self) -> usize {
        self.phases.iter().map(|p| p.sharpness_steps).sum()
    }
}

/// Run all phases of `stream` with one seed, evaluating after each.
pub fn run_continual(
    experiment: &Experiment,
    stream: &TaskStream,
    split: &Split,
    seed: u64,
) -> Result<ContinualOutcome> {
    run_continual_with(experiment, stream, split, seed, |_, _| Ok(()))
}

/// [`run_continual`] with a hook called after each phase is trained and
/// evaluated; its time is not counted in `phase_seconds`.
pub fn run_continual_with(
    experiment: &Experiment,
    stream: &TaskStream,
    split: &Split,
    seed: u64,
    mut after_phase: impl FnMut(usize, &Learner) -> Result<()>,
) -> Result<ContinualOutcome> {
    experiment.optimizer.validate()?;
    experiment.schedule.validate()?;
    experiment.train.validate()?;
    let first = stream
        .phases()
        .first()
        .ok_or_else(|| Error::validation("stream.phases", "stream is empty"))?;
    let mut learner = Learner::new(
        split.train.dim(),
        experiment.hidden.clone(),
        experiment.activation,
        first.len(),
        seed,
    )?;
    let mut replay = ReplayBuffer::new(experiment.train.replay_capacity, seed);
    let mut ledger = MetricsLedger::new(stream.len());
    let mut phases = Vec::with_capacity(stream.len());
    let mut phase_seconds = Vec::with_capacity(stream.len());
    for phase in 0..stream.len() {
        let started = Instant::now();
        phases.push(run_phase(
            stream,
            phase,
            &mut learner,
            &split.train,
            experiment,
            &mut replay,
            seed,
        )?);
        let row = evaluate(
            &learner.oracle()?,
            &learner.params,
            stream,
            phase,
            &split.test,
        )?;
        ledger.push_row(row)?;
        phase_seconds.push(started.elapsed().as_secs_f64());
        after_phase(phase, &learner)?;
    }
    Ok(ContinualOutcome {
        ledger,
        phases,
        learner,
        replay,
        phase_seconds,
    })
}
