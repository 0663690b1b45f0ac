//! Few-shot adaptation of prototype classifiers over frozen embeddings.
//!
//! Two adapters share one softmax linear probe ([`model`]):
//!
//! * [`map_adapter`] fits a single weight matrix, initialised at the class
//!   prototypes and penalised for drifting from them.
//! * [`bayes_adapter`] fits a Gaussian variational posterior over the same
//!   weights and predicts by Monte Carlo averaging.
//!
//! [`metrics`] scores predictions for accuracy, calibration and selective
//! classification; [`data`] reads and writes the BADF container and builds
//! few-shot splits and synthetic benchmarks.

pub mod bayes_adapter;
pub mod data;
pub mod error;
pub mod map_adapter;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
