//! Latent factor analysis of high-dimensional incomplete matrices, trained by
//! stochastic gradient descent with an optional proportional-integral
//! refinement of the per-instance learning error.
//!
//! The crate provides:
//!
//! - [`data`]: sparse rating matrices, parsing, splitting, and synthesis;
//! - [`model`]: latent factor storage, prediction, and the regularized loss;
//! - [`optim`]: the plain SGD epoch and the PI-refined epoch with per-node
//!   integral accumulators;
//! - [`metrics`]: RMSE/MAE over held-out entries and convergence detection;
//! - [`harness`]: end-to-end experiments, gain sweeps, and csv reporting.
//!
//! The `pilf` binary wraps [`harness`] behind a command-line interface.

pub mod data;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;

pub use data::{generate_synthetic, parse_ratings, split_ratings, HdiMatrix, RatingTriple, SplitSpec};
pub use harness::{run_experiment, sweep_gains, ExperimentConfig, ExperimentOutcome, SweepConfig};
pub use metrics::{check_convergence, mae, rmse, EpochReport};
pub use model::{instance_error, regularized_loss, Hyperparams, LatentFactors};
pub use optim::{pilf_step, plain_sgd_step, run_epoch, OptimizerKind, PiState};
