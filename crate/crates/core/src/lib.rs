//! Learning mixtures of Markov chains and MDPs from short, unlabeled
//! trajectories.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`subspace`]: average double-estimator outer products of per-trajectory
//!    next-state estimates and keep the top-`K` eigenspace per `(s,a)`.
//! 2. [`clustering`]: project per-trajectory estimates onto those subspaces,
//!    estimate pairwise distances from two time-separated windows, threshold,
//!    and cluster the similarity graph.
//! 3. [`em`]: optionally refine the clusters with soft or hard EM.
//! 4. [`inference`]: estimate one model per cluster and classify further
//!    trajectories against them.
//!
//! [`simulator`] generates ground truth and [`metrics`] scores labelings.
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clustering;
pub mod em;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod segment;
pub mod simulator;
pub mod subspace;

pub use error::{Error, Result};
pub use model::{MarkovMixture, Trajectory};
pub use segment::{CountMode, CountTable, SegmentScheme};
