//! Bayesian paired-comparison inference for home advantage in game-result
//! data.
//!
//! The pipeline: ingest game tables, filter team-seasons to a stable core,
//! fit one of four HA model families with dynamic Hamiltonian Monte Carlo,
//! check convergence, compare model fit via PSIS-LOO, and summarize HA
//! levels and trends. A synthetic-league simulator closes the loop so every
//! estimator is testable against known truth.

pub mod analysis;
pub mod artifact;
pub mod diagnostics;
pub mod error;
pub mod filtering;
pub mod ingest;
pub mod loo;
pub mod math;
pub mod model;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
