//! Cost-based optimizer and execution engine for gradient-descent training.
//!
//! A training request names a task (or gradient function), a dataset and some
//! constraints. The optimizer runs short speculative trainings on a data sample
//! to estimate how many iterations each GD algorithm needs, prices every
//! candidate execution plan with an analytical cost model and executes the
//! cheapest one through a seven-operator pipeline:
//!
//! ```text
//! Transform -> Stage -> loop { Sample -> Compute -> Update -> Converge -> Loop }
//! ```
//!
//! Module map:
//!
//! - [`dataset`]: ingest, partitioning, synthetic generators.
//! - [`operators`]: the seven operators, gradient and loss functions.
//! - [`sampling`]: Bernoulli, random-partition and shuffled-partition samplers.
//! - [`plans`]: the plan space, pipeline assembly, SVRG and line search.
//! - [`executor`]: runs a pipeline, records the error sequence and timings.
//! - [`estimator`]: speculation and the `T(eps) = a / eps` fit.
//! - [`costmodel`]: per-operator and per-plan costs, calibration.
//! - [`optimizer`]: plan choice and constraint checks.
//! - [`querylang`]: parser for the `RUN ... HAVING ... USING ...` language.
//! - [`artifacts`]: model files and JSON reports.

pub mod artifacts;
pub mod costmodel;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod executor;
pub mod operators;
pub mod optimizer;
pub mod plans;
pub mod querylang;
pub mod sampling;
pub mod seed;

pub use error::{Error, Result};
