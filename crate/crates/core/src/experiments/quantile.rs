//! Empirical `(1 - delta)`-quantiles of per-run average gradient norms.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::optimizers::run;

use super::{par_map, ExperimentKind, ExperimentSpec};

pub const DEFAULT_DELTA_GRID: [f64; 10] =
    [0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub label: String,
    /// Per-run `(1/T) sum_t |grad F(x_t)|`, ascending.
    #[serde(skip)]
    pub sorted: Vec<f64>,
    /// `(delta, quantile)` in grid order.
    pub quantiles: Vec<(f64, f64)>,
}

impl QuantileSummary {
    pub fn new(label: impl Into<String>, mut stats: Vec<f64>, delta_grid: &[f64]) -> Result<Self> {
        stats.sort_by(f64::total_cmp);
        let quantiles = delta_grid
            .iter()
            .map(|&d| Ok((d, empirical_quantile(&stats, d)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            label: label.into(),
            sorted: stats,
            quantiles,
        })
    }

    pub fn at(&self, delta: f64) -> Option<f64> {
        self.quantiles
            .iter()
            .find(|(d, _)| (d - delta).abs() <= 1e-12 * delta)
            .map(|&(_, q)| q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub replicates: usize,
    pub summaries: Vec<QuantileSummary>,
}

impl QuantileReport {
    pub fn get(&self, label: &str) -> Option<&QuantileSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }
}

/// Order statistic `ceil((1 - delta) R)` of an ascending sample.
pub fn empirical_quantile(sorted: &[f64], delta: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::NoSamples);
    }
    ensure(
        delta > 0.0 && delta < 1.0,
        "quantile.delta",
        format!("must lie in (0, 1), got {delta}"),
    )?;
    let r = sorted.len();
    if (r as f64) * delta < 1.0 - 1e-9 {
        return Err(Error::QuantileUnresolvable {
            replicates: r,
            delta,
        });
    }
    let rank = ((1.0 - delta) * r as f64 - 1e-9)
        .ceil()
        .clamp(1.0, r as f64) as usize;
    Ok(sorted[rank - 1])
}

/// Share of consecutive grid triples on which the quantile curve, plotted
/// against `ln(1/delta)`, has non-increasing slope.
pub fn concave_fraction(summary: &QuantileSummary) -> f64 {
    let pts: Vec<(f64, f64)> = summary
        .quantiles
        .iter()
        .map(|&(d, q)| ((1.0 / d).ln(), q))
        .collect();
    let triples = pts.len().saturating_sub(2);
    if triples == 0 {
        return 1.0;
    }
    let slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
    let concave = pts
        .windows(3)
        .filter(|w| slope(w[1], w[2]) <= slope(w[0], w[1]) + 1e-12)
        .count();
    concave as f64 / triples as f64
}

pub fn quantile_study(spec: &ExperimentSpec, workers: usize) -> Result<QuantileReport> {
    spec.require_kind(ExperimentKind::Quantile)?;
    spec.validate()?;
    ensure(
        !spec.delta_grid.is_empty(),
        "quantile.deltas",
        "must not be empty",
    )?;
    let min_delta = spec.delta_grid.iter().copied().fold(1.0, f64::min);
    if (spec.replicates as f64) * min_delta < 1.0 - 1e-9 {
        return Err(Error::QuantileUnresolvable {
            replicates: spec.replicates,
            delta: min_delta,
        });
    }
    let prob = spec.problem();
    let summaries = spec
        .algorithms
        .iter()
        .map(|alg| {
            let stats = par_map(workers, spec.replicates, |r| {
                let trace = run(
                    &prob,
                    &alg.optimizer,
                    spec.seed.replicate(r),
                    &spec.start(r),
                )?;
                Ok(trace.avg_grad_norm())
            })?;
            QuantileSummary::new(alg.label.clone(), stats, &spec.delta_grid)
        })
        .collect::<Result<_>>()?;
    Ok(QuantileReport {
        replicates: spec.replicates,
        summaries,
    })
}
