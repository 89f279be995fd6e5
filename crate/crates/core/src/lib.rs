//! Mean-field training of feed-forward classifiers whose connections are
//! spike-and-slab random variables.
//!
//! Every connection carries a spike probability `pi` (the chance that it is
//! absent) and a Gaussian slab `N(m, xi)`. Training adjusts `(pi, m, xi)` by
//! gradient descent through a reparameterized Gaussian pre-activation, and
//! the trained ensemble can then be inspected: per-layer sparsity, connection
//! entropy, important/unimportant weights, and targeted perturbations.
//!
//! Module map:
//! - [`sas`]: parameter storage, moments, clipping, initialization, sampling.
//! - [`forward`]: stochastic and mean-network forward passes, loss.
//! - [`gbp`]: error back-propagation, hyperparameter gradients, SGD, training.
//! - [`analysis`]: entropy, sparsity, weight classes, ensembles, perturbations.
//! - [`data`]: IDX ingestion, datasets, network files, CSV export, manifests.
//! - [`cli`]: command-line front end.

pub mod analysis;
pub mod cli;
pub mod data;
mod error;
pub mod forward;
pub mod gbp;
pub mod rng;
pub mod sas;

pub use error::{Error, Result};
