//! Group recommendation with a Transformer encoder over (members, item)
//! token sets, trained with positive/negative/margin ranking losses and a
//! member-masking InfoNCE objective.
//!
//! Modules, bottom-up:
//!
//! - [`numcore`]: dense `f64` tensors, kernels, Adam, gradient checking.
//! - [`data`]: datasets, splits, negative sampling, batching, synthetic data.
//! - [`model`]: the encoder scorer with hand-written backward pass.
//! - [`loss`]: training objectives with analytic gradients.
//! - [`train`]: the training loop, early stopping, hyperparameter grid.
//! - [`eval`]: HR/NDCG ranking evaluation, popularity baseline, drift.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod loss;
pub mod model;
pub mod numcore;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
