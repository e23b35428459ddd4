//! Interpretable neural networks for panel data.
//!
//! The model is a four-layer composition: a shared sigmoid splitting layer that
//! turns raw payment amounts into soft "pays / does not pay" indicators, a
//! per-period sigmoid dimension reduction, a persistent change filter over the
//! lag window, and an L1-penalized logistic head. Every layer has a direct
//! reading, so the fitted parameters can be reported as an interpretation.
//!
//! Modules:
//! - [`filters`]: the persistent change filter family and its exact gradients.
//! - [`network`]: forward pass, penalized loss, backpropagation, interpretation.
//! - [`training`]: Adam, the training loop, metrics and gradient checks.
//! - [`features`]: handcrafted features and the logistic / MLP baselines.
//! - [`data`]: synthetic panel generator, CSV I/O, windowing, splitting.
//! - [`experiment`]: model comparison and robustness pipelines.
//! - [`config`]: `key = value` files shared by the generator, trainer and CLI.
//! - [`cli`]: the `intnn` command.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod filters;
pub mod network;
pub mod training;

mod math;

pub use error::{Error, Result};
