//! Multi-scan generalized labeled multi-Bernoulli (GLMB) posterior recursion.
//!
//! The crate propagates the labeled multi-object *posterior* (densities on
//! sets of trajectories) rather than the filtering density. Components of
//! the posterior are indexed by association histories and are found by Gibbs
//! sampling over those histories. A baseline single-scan GLMB filter shares
//! the same weight increments and Gaussian kernels.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the command
//! line and thread-level parallelism live in the companion `msglmb` crate.
//!
//! Module map:
//! - [`labeled_state`]: labels, labeled states, state sequences, trajectories
//!   and the multi-scan exponential.
//! - [`association`]: extended association maps and histories.
//! - [`gaussian`]: Gaussian algebra for stacked trajectory densities.
//! - [`models`]: the standard multi-object dynamic and measurement model.
//! - [`multiscan_glmb`]: the posterior density, truncation, statistics and
//!   estimators.
//! - [`gibbs`]: factor-wise and full Gibbs samplers over histories.
//! - [`smoother`]: recursive and batch posterior drivers plus the GLMB filter.
//! - [`metrics`]: OSPA and OSPA(2).
//! - [`simulator`]: scenario presets, ground truth and measurements.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod association;
pub mod error;
pub mod gaussian;
pub mod gibbs;
pub mod labeled_state;
pub mod metrics;
pub mod models;
pub mod multiscan_glmb;
pub mod simulator;
pub mod smoother;

mod assignment;
pub mod seed;

pub use error::{Error, Result};
pub use labeled_state::{Label, LabeledState, MultiObjectStateSequence, TrajectorySegment};

pub use nalgebra::{DMatrix, DVector};
