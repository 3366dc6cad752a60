//! Incremental decision forests for batch data streams.
//!
//! A forest is induced on the first batch and then repaired batch by batch:
//! leaves whose confidence drops are flagged as perturbed, heavily perturbed
//! trees are wrapped with separating-axis splits around the new batch's region
//! and their perturbed leaves regrown with entropy splits. Three forests run in
//! parallel (permanent, active, temporary) so that sustained concept drift is
//! detected and the active forest replaced.

pub mod adf;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evalstat;
pub mod geometry;
pub mod repair;
pub mod rng;
pub mod streamgen;
pub mod tree;

pub use error::{Error, Result};
