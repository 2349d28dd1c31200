//! Simulation engine for anchored indirect treatment comparisons.
//!
//! Generates paired two-arm trials under logistic or linear outcome models,
//! calibrates true marginal effects by Monte Carlo integration, and benchmarks
//! three anchored indirect-comparison estimators (Bucher, MAIC, parametric
//! G-computation) on bias, MSE, and coverage.

pub mod calibrate;
pub mod cli;
pub mod dgm;
pub mod estimators;
pub mod harness;
pub mod linmod;
pub mod report;
pub mod stats;
pub mod stream;

/// Engine version embedded in every output artifact.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
