//! Ordering-based pruning of variable selection ensembles.
//!
//! The library builds stability-selection ensembles on top of a lasso
//! regularization-path solver, condenses each member's selection matrix into
//! an importance vector, greedily reorders the members against a reference
//! vector, and fuses only a top prefix of the reordered ensemble. Simulation
//! generators, selection/prediction metrics, and the command-line harness
//! live alongside the core algorithms so experiments are reproducible from a
//! single seed.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pruning;
pub mod randgen;
pub mod solvers;
pub mod stabsel;

pub use error::{Error, Result};
