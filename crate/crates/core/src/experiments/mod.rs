//! Monte-Carlo experiment harness.
//!
//! Replicate `r` of every study draws its noise from `seed.replicate(r)` and
//! its starting point from the `INIT_DOMAIN` key of that seed, so all
//! algorithms in a study see common random numbers. Replicates run on a
//! rayon pool and are folded in replicate order, which makes every output
//! independent of the worker count.

pub mod accum;
pub mod convergence;
pub mod lemmas;
pub mod output;
pub mod presets;
pub mod quantile;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::noise::NoiseModel;
use crate::optimizers::{AccumulationConfig, OptimizerConfig};
use crate::problems::{InitScheme, Quadratic, StochasticProblem};
use crate::rng::SeedSpec;
use crate::vector::Vector;

pub use accum::{accum_compare, AccumComparison, PlacementSummary};
pub use convergence::{convergence_study, AlgorithmSummary, ConvergenceReport};
pub use lemmas::{
    lemma_noise, log_log_slope, validate_bernstein, validate_lemma_b1, validate_lemma_c1,
    validate_prop_b1, BernsteinReport, LemmaB1Report, LemmaC1Report, PropB1Report,
};
pub use quantile::{
    concave_fraction, empirical_quantile, quantile_study, QuantileReport, QuantileSummary,
    DEFAULT_DELTA_GRID,
};

/// Domain tag separating starting-point draws from gradient noise.
pub const INIT_DOMAIN: u64 = 0x1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    Quantile,
    LemmaB1,
    LemmaC1,
    PropB1,
    Bernstein,
    AccumCompare,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Convergence,
        ExperimentKind::Quantile,
        ExperimentKind::LemmaB1,
        ExperimentKind::LemmaC1,
        ExperimentKind::PropB1,
        ExperimentKind::Bernstein,
        ExperimentKind::AccumCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Quantile => "quantile",
            ExperimentKind::LemmaB1 => "lemma-b1",
            ExperimentKind::LemmaC1 => "lemma-c1",
            ExperimentKind::PropB1 => "prop-b1",
            ExperimentKind::Bernstein => "bernstein",
            ExperimentKind::AccumCompare => "accum-compare",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

/// One optimizer configuration under a display label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub label: String,
    pub optimizer: OptimizerConfig,
}

impl AlgorithmSpec {
    /// Labelled by the estimator's algorithm name.
    pub fn new(optimizer: OptimizerConfig) -> Self {
        Self {
            label: optimizer.estimator.mode.algorithm_name().to_string(),
            optimizer,
        }
    }
}

/// Parameters for the lemma validators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSpec {
    /// Tail indices to sweep.
    pub p_grid: Vec<f64>,
    /// Batch sizes for the in-expectation check.
    pub n_grid: Vec<usize>,
    /// Batch size for the high-probability check.
    pub n: usize,
    pub delta_grid: Vec<f64>,
}

impl Default for LemmaSpec {
    fn default() -> Self {
        Self {
            p_grid: vec![1.3, 1.6, 2.0],
            n_grid: vec![1, 4, 16, 64, 256, 1024],
            n: 64,
            delta_grid: vec![0.2, 0.1, 0.05, 0.01],
        }
    }
}

/// A fully resolved experiment on the quadratic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub noise: NoiseModel,
    pub init: InitScheme,
    pub algorithms: Vec<AlgorithmSpec>,
    pub replicates: usize,
    pub seed: SeedSpec,
    /// Quantile levels for the quantile study.
    pub delta_grid: Vec<f64>,
    /// Micro-batching for the placement comparison; `placement` is ignored.
    pub accumulation: Option<AccumulationConfig>,
    pub lemma: LemmaSpec,
}

impl ExperimentSpec {
    /// Checks the invariants shared by every kind.
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.replicates >= 1,
            "experiment.replicates",
            "must be >= 1",
        )?;
        let prob = self.problem();
        for alg in &self.algorithms {
            match self.kind {
                ExperimentKind::AccumCompare => alg.optimizer.validate_update(prob.smoothness())?,
                _ => alg.optimizer.validate(prob.smoothness())?,
            }
        }
        if let Some(acc) = &self.accumulation {
            acc.validate()?;
        }
        Ok(())
    }

    pub fn problem(&self) -> Quadratic {
        Quadratic::new(self.noise)
    }

    /// Starting point of replicate `r`, shared across algorithms.
    pub fn start(&self, r: u64) -> Vector {
        let mut rng = self.seed.replicate(r).domain(INIT_DOMAIN).stream();
        self.init.draw(self.noise.dim(), &mut rng)
    }

    pub fn require_kind(&self, kind: ExperimentKind) -> Result<()> {
        ensure(
            self.kind == kind,
            "experiment.kind",
            format!("expected `{kind}`, got `{}`", self.kind),
        )
    }
}

/// Evaluates `f(0..count)` on a pool of `workers` threads and returns the
/// results in index order.
pub fn par_map<T, F>(workers: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    ensure(workers >= 1, "workers", "must be >= 1")?;
    if workers == 1 {
        return (0..count as u64).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter {
            name: "workers",
            reason: e.to_string(),
        })?;
    pool.install(|| (0..count as u64).into_par_iter().map(f).collect())
}

/// Worker count from the machine's available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
