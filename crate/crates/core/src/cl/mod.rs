//! Class-incremental learning: task streams, exemplar replay, the per-phase
//! training loop and the accuracy ledger.

mod harness;
mod metrics;
mod replay;
mod stream;

pub use harness::{
    evaluate, run_continual, run_continual_with, run_phase, ContinualOutcome, EpochLog, Experiment,
    Learner, PhaseLog, TrainConfig,
};
pub use metrics::MetricsLedger;
pub use replay::{Exemplar, ReplayBuffer};
pub use stream::{build_stream, TaskStream};

#[cfg(test)]
mod tests;
