//! Named hyperparameter sets for the convergence and quantile studies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{EstimatorConfig, EstimatorMode};
use crate::optimizers::OptimizerConfig;

use super::AlgorithmSpec;

pub const DEFAULT_DIM: usize = 10;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_ETA: f64 = 0.01;
pub const DEFAULT_REPLICATES: usize = 10;
pub const QUANTILE_STEPS: usize = 100;
pub const QUANTILE_REPLICATES: usize = 10_000;

/// The three comparators in the order Clip-SGD, PS-Clip-SGD, Normalized SGD.
pub const COMPARATORS: [EstimatorMode; 3] = [
    EstimatorMode::GlobalClip,
    EstimatorMode::PsClipIncreasing,
    EstimatorMode::Normalize,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `eta = 0.01`, `alpha = beta = gamma = 1` for every comparator.
    Untuned,
    /// Per-tail-index tuned step sizes and thresholds.
    Tuned,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Untuned => "untuned",
            Preset::Tuned => "tuned",
        }
    }

    /// Comparator configurations for tail index `p`.
    pub fn algorithms(self, p: f64, batch: usize, steps: usize) -> Result<Vec<AlgorithmSpec>> {
        match self {
            Preset::Untuned => Ok(untuned(batch, steps, DEFAULT_ETA)),
            Preset::Tuned => tuned(p, batch, steps),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "untuned" => Ok(Preset::Untuned),
            "tuned" => Ok(Preset::Tuned),
            _ => Err(format!("unknown preset `{s}` (expected untuned or tuned)")),
        }
    }
}

fn spec(
    mode: EstimatorMode,
    batch: usize,
    steps: usize,
    eta: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> AlgorithmSpec {
    let est = EstimatorConfig::new(mode, batch)
        .with_alpha(alpha)
        .with_beta(beta)
        .with_gamma(gamma);
    AlgorithmSpec::new(OptimizerConfig::constant(eta, steps, est))
}

/// Clip-SGD, PS-Clip-SGD and Normalized SGD with shared step size and unit
/// thresholds.
pub fn untuned(batch: usize, steps: usize, eta: f64) -> Vec<AlgorithmSpec> {
    COMPARATORS
        .iter()
        .map(|&mode| spec(mode, batch, steps, eta, 1.0, 1.0, 1.0))
        .collect()
}

/// Tuned comparators; defined for `p` in {1.2, 1.5, 1.8}.
pub fn tuned(p: f64, batch: usize, steps: usize) -> Result<Vec<AlgorithmSpec>> {
    let (clip_eta, clip_gamma) = match p {
        x if (x - 1.8).abs() < 1e-9 => (0.5, 0.1),
        x if (x - 1.5).abs() < 1e-9 => (0.05, 0.6),
        x if (x - 1.2).abs() < 1e-9 => (0.4, 0.1),
        _ => {
            return Err(invalid(
                "experiment.preset",
                format!("tuned preset exists for p in {{1.2, 1.5, 1.8}}, got {p}"),
            ))
        }
    };
    Ok(vec![
        spec(
            EstimatorMode::GlobalClip,
            batch,
            steps,
            clip_eta,
            1.0,
            1.0,
            clip_gamma,
        ),
        spec(
            EstimatorMode::PsClipIncreasing,
            batch,
            steps,
            0.05,
            1.0,
            p,
            1.0,
        ),
        spec(EstimatorMode::Normalize, batch, steps, 0.05, 1.0, 1.0, 1.0),
    ])
}
