//! Run configuration, dataset construction and result persistence.
//!
//! Configs are TOML with `[dataset]`, `[stream]`, `[optimizer]`, `[schedule]`
//! and `[run]` sections. A persisted run directory holds `run.json`,
//! `metrics.csv` and, when requested, `spectrum_phase{p}.csv`.

mod config;
mod record;

pub use config::{
    generate_dataset, load_config, parse_config, OptimizerSection, RunConfig, RunSection,
    StreamSection,
};
pub use record::{execute_run, mean_std, persist_run, phase_batches, phase_spectrum, RunRecord};
