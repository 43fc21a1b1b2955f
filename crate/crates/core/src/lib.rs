//! Simulation and evaluation of label-efficient detector retraining over a
//! temporally ordered stream of batches.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: sparse records, manifests and the [`corpus::TemporalStream`]
//!   every other module consumes.
//! - [`synthdrift`]: seeded synthetic streams with controllable
//!   feature/class association flips.
//! - [`detector`]: the shipped L2-logistic detector, Platt scaling and
//!   fixed-FPR thresholding.
//! - [`metrics`]: confusion counts, recall/F1 at fixed FPR, average
//!   precision and binary entropy.
//! - [`active`]: the eight pool-based query strategies as budgeted top-k
//!   selectors.
//! - [`semisup`]: symmetric and asymmetric self-training pseudo-labelers.
//! - [`driftstat`]: per-feature WMW association tests, the stability score
//!   and the stability/F1 correlation analysis.
//! - [`pipeline`]: the prequential experiment loop (evaluate, query,
//!   pseudo-label, retrain).
//! - [`runner`]: run specs, grids and the on-disk results layout
//!   used by the `driftbench` binary.

pub mod active;
pub mod corpus;
pub mod detector;
pub mod driftstat;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod runner;
pub mod seed;
pub mod semisup;
pub mod synthdrift;

pub use error::{Error, Result};
