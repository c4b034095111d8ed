//! Flatness-decomposition optimizers for continual learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`param`], [`model`], [`oracle`]: flat parameter vectors, MLP/quadratic
//!   losses with exact gradients and Hessian-vector products.
//! - [`optim`]: SGD, zeroth-order (SAM-style), first-order (GAM-style),
//!   combined, and the decomposed FLAD step with its schedules.
//! - [`cl`]: class-incremental task streams, replay and the Acc/AAA ledger.
//! - [`diagnostics`]: Hessian spectrum, Hutchinson trace, Tr(HΣ), landscape slices.
//! - [`io`]: TOML run configs, dataset generators and run persistence.
//! - [`verify`]: finite-difference and dense-Hessian oracle checks.

pub mod cl;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod param;
pub mod seed;
pub mod verify;

pub use error::{Error, Result};
pub use model::{init_params, Activation, Batch, ModelSpec};
pub use oracle::{LossOracle, MlpLoss, Objective, Quadratic};
pub use param::{Layout, ParamVector, Span};
