//! Stochastic optimization under heavy-tailed gradient noise: per-sample
//! clipped mean estimators, the SGD loops built on them, closed-form
//! convergence bounds and a Monte-Carlo experiment harness.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod noise;
pub mod optimizers;
pub mod problems;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
pub use estimators::{EstimateResult, EstimatorConfig, EstimatorMode};
pub use noise::{NoiseKind, NoiseModel};
pub use optimizers::{
    AccumulationConfig, ClipPlacement, IterationRecord, OptimizerConfig, RunTrace, StepSchedule,
};
pub use problems::{InitScheme, Quadratic, StochasticProblem};
pub use rng::SeedSpec;
pub use vector::Vector;
