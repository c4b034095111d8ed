//! The optimizer family: SGD, zeroth-order and first-order sharpness-aware
//! steps, their undecomposed combination, and the decomposed FLAD update.

mod config;
mod schedule;
mod step;

pub use config::{HyperParams, OptimizerConfig, OptimizerKind, PerturbationVariant};
pub use schedule::{Schedule, ScheduleStep, LR_DECAY_FACTOR};
pub use step::{
    baseline_step, decompose, flad_step, sgd_step, step, update_ema, variant_perturbation,
    zeroth_perturbation, OptimizerState, PerturbationContext, StepReport,
};

#[cfg(test)]
mod tests;
