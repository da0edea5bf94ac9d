//! Top-k classification toolkit.
//!
//! The crate is organised the way the computations depend on each other:
//!
//! - [`types`]: score vectors, probability vectors, finite distributions,
//!   datasets, cardinality sets and the single ranking comparator.
//! - [`losses`]: the top-k loss and the comp-sum / constrained surrogate
//!   kernels with analytic gradients.
//! - [`costsens`]: instance-dependent costs, the cardinality-aware target
//!   loss and its cost-sensitive surrogates.
//! - [`bounds`]: the transforms that turn a surrogate regret into a bound on
//!   the target regret.
//! - [`oracle`]: brute-force and closed-form conditional errors, regrets,
//!   minimizability gaps and bound checks on finite distributions.
//! - [`train`]: linear and two-hidden-layer models, Adam, training loops.
//! - [`gradcheck`]: finite-difference suites for every kernel and model.
//!
//! Labels are 0-based throughout (`0..n`); cardinalities are the actual
//! set sizes (`1..=n`).

pub mod bounds;
pub mod costsens;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod oracle;
pub mod rng;
pub mod train;
pub mod types;

pub use error::{Error, Result};
