//! Monte-Carlo checks of the clipped-mean error bounds, the pathwise
//! descent inequality and the vector Bernstein tail.
//!
//! The estimator lemmas are exercised on scalar symmetrized Pareto samples
//! with tail index `p + 1/2` and unit scale, whose mean is zero and whose
//! `p`-th absolute moment `sigma^p = (p + 1/2) / (1/2)` is known exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::bernstein_tail;
use crate::error::{ensure, invalid, Result};
use crate::estimators::ps_clip_estimate;
use crate::noise::SymmetrizedPareto;
use crate::optimizers::{check_descent_inequality, run};
use crate::rng::SeedSpec;
use crate::vector::Vector;

use super::{par_map, ExperimentKind, ExperimentSpec};

/// Replicate count below which the in-expectation table is flagged.
pub const MIN_STABLE_REPLICATES: usize = 1000;

/// Noise for the estimator lemmas at tail index `p`, with its `sigma`.
pub fn lemma_noise(p: f64) -> Result<(SymmetrizedPareto, f64)> {
    ensure(
        p > 1.0 && p <= 2.0,
        "lemma.p",
        format!("must lie in (1, 2], got {p}"),
    )?;
    let noise = SymmetrizedPareto::new(p + 0.5, 1.0)?;
    let moment = noise
        .abs_moment(p)
        .ok_or_else(|| invalid("lemma.p", "moment diverges"))?;
    Ok((noise, moment.powf(1.0 / p)))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    ensure(
        points.len() >= 2,
        "slope.points",
        "need at least two points",
    )?;
    ensure(
        points.iter().all(|&(x, y)| x > 0.0 && y > 0.0),
        "slope.points",
        "coordinates must be positive",
    )?;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    ensure(sxx > 0.0, "slope.points", "x values must not all coincide")?;
    Ok(sxy / sxx)
}

fn fill(noise: &SymmetrizedPareto, rng: &mut crate::rng::Stream, buf: &mut [Vector]) {
    for v in buf {
        v.as_mut_slice()[0] = noise.sample(rng);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaB1Row {
    pub n: usize,
    pub mse: f64,
    /// `8 sigma^2 n^{-2(p-1)/p}`
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaB1Report {
    pub p: f64,
    pub sigma: f64,
    pub replicates: usize,
    pub rows: Vec<LemmaB1Row>,
    /// Fitted over the rows with `n >= 4`.
    pub slope: Option<f64>,
    /// `-2(p-1)/p`
    pub target_slope: f64,
    /// Set when `replicates` is too small for a stable estimate.
    pub low_replicates: bool,
}

impl LemmaB1Report {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }

    pub fn slope_within(&self, tol: f64) -> bool {
        self.slope
            .is_some_and(|s| (s - self.target_slope).abs() <= tol)
    }
}

/// Mean squared error of the increasing-threshold clipped mean with
/// `alpha = sigma`, `beta = p`, at every batch size in `n_grid`.
pub fn validate_lemma_b1(
    p: f64,
    n_grid: &[usize],
    replicates: usize,
    seed: SeedSpec,
    workers: usize,
) -> Result<LemmaB1Report> {
    let (noise, sigma) = lemma_noise(p)?;
    ensure(!n_grid.is_empty(), "lemma.n_grid", "must not be empty")?;
    ensure(
        n_grid.iter().all(|&n| n >= 1),
        "lemma.n_grid",
        "entries must be >= 1",
    )?;
    ensure(replicates >= 1, "experiment.replicates", "must be >= 1")?;
    let max_n = n_grid.iter().copied().max().unwrap_or(1);

    let per_rep = par_map(workers, replicates, |r| {
        let mut buf = vec![Vector::zeros(1); max_n];
        n_grid
            .iter()
            .map(|&n| {
                let mut rng = seed.domain(n as u64).replicate(r).stream();
                fill(&noise, &mut rng, &mut buf[..n]);
                let est = ps_clip_estimate(&buf[..n], sigma, p)?.estimate[0];
                Ok(est * est)
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let rate = 2.0 * (p - 1.0) / p;
    let rows: Vec<LemmaB1Row> = n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mse = per_rep.iter().map(|errs| errs[i]).sum::<f64>() / replicates as f64;
            let bound = 8.0 * sigma * sigma * (n as f64).powf(-rate);
            LemmaB1Row {
                n,
                mse,
                bound,
                holds: mse <= bound,
            }
        })
        .collect();
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n >= 4)
        .map(|r| (r.n as f64, r.mse))
        .collect();
    Ok(LemmaB1Report {
        p,
        sigma,
        replicates,
        slope: log_log_slope(&fit).ok(),
        target_slope: -rate,
        low_replicates: replicates < MIN_STABLE_REPLICATES,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaC1Row {
    pub delta: f64,
    /// `7 sigma (ln(1/delta) / n)^{(p-1)/p}`
    pub radius: f64,
    pub exceedances: usize,
    pub frequency: f64,
    /// `delta e^{1/4}`
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaC1Report {
    pub p: f64,
    pub sigma: f64,
    pub n: usize,
    pub replicates: usize,
    pub rows: Vec<LemmaC1Row>,
    /// Frequencies non-increasing as `delta` decreases.
    pub monotone: bool,
}

impl LemmaC1Report {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Exceedance frequency of the confidence-scaled clipped mean, thresholds
/// `sigma k^{1/p} / ln(1/delta)^{1/p}`, at each `delta`.
pub fn validate_lemma_c1(
    p: f64,
    n: usize,
    delta_grid: &[f64],
    replicates: usize,
    seed: SeedSpec,
    workers: usize,
) -> Result<LemmaC1Report> {
    let (noise, sigma) = lemma_noise(p)?;
    ensure(n >= 1, "lemma.n", "must be >= 1")?;
    ensure(!delta_grid.is_empty(), "lemma.deltas", "must not be empty")?;
    ensure(
        delta_grid.iter().all(|&d| d > 0.0 && d < 1.0),
        "lemma.deltas",
        "entries must lie in (0, 1)",
    )?;
    let min_delta = delta_grid.iter().copied().fold(1.0, f64::min);
    ensure(
        replicates as f64 * min_delta >= 10.0 - 1e-9,
        "experiment.replicates",
        format!(
            "need at least 10/delta = {} replicates, got {replicates}",
            (10.0 / min_delta).ceil()
        ),
    )?;

    let levels: Vec<(f64, f64)> = delta_grid
        .iter()
        .map(|&d| {
            let log = (1.0 / d).ln();
            (
                sigma / log.powf(1.0 / p),
                7.0 * sigma * (log / n as f64).powf((p - 1.0) / p),
            )
        })
        .collect();

    let per_rep = par_map(workers, replicates, |r| {
        let mut buf = vec![Vector::zeros(1); n];
        let mut rng = seed.replicate(r).stream();
        fill(&noise, &mut rng, &mut buf);
        levels
            .iter()
            .map(
                |&(alpha, radius)| Ok(ps_clip_estimate(&buf, alpha, p)?.estimate[0].abs() > radius),
            )
            .collect::<Result<Vec<bool>>>()
    })?;

    let rows: Vec<LemmaC1Row> = delta_grid
        .iter()
        .zip(&levels)
        .enumerate()
        .map(|(i, (&delta, &(_, radius)))| {
            let exceedances = per_rep.iter().filter(|hits| hits[i]).count();
            let frequency = exceedances as f64 / replicates as f64;
            let bound = delta * 0.25f64.exp();
            LemmaC1Row {
                delta,
                radius,
                exceedances,
                frequency,
                bound,
                holds: frequency <= bound,
            }
        })
        .collect();

    let mut by_delta: Vec<&LemmaC1Row> = rows.iter().collect();
    by_delta.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    let monotone = by_delta
        .windows(2)
        .all(|w| w[1].frequency <= w[0].frequency);
    Ok(LemmaC1Report {
        p,
        sigma,
        n,
        replicates,
        rows,
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropB1Row {
    pub label: String,
    pub replicate: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropB1Report {
    pub rows: Vec<PropB1Row>,
    pub passed: usize,
    pub total: usize,
    pub min_slack: f64,
}

/// Runs every algorithm for every replicate with the step-size guard on and
/// checks the descent inequality pathwise.
pub fn validate_prop_b1(spec: &ExperimentSpec, workers: usize) -> Result<PropB1Report> {
    spec.require_kind(ExperimentKind::PropB1)?;
    spec.validate()?;
    let prob = spec.problem();
    let mut rows = Vec::new();
    for alg in &spec.algorithms {
        let opt = alg.optimizer.with_theorem_mode(true);
        let checks = par_map(workers, spec.replicates, |r| {
            let trace = run(&prob, &opt, spec.seed.replicate(r), &spec.start(r))?;
            check_descent_inequality(&trace, trace.init_gap)
        })?;
        rows.extend(checks.into_iter().enumerate().map(|(r, c)| PropB1Row {
            label: alg.label.clone(),
            replicate: r as u64,
            lhs: c.lhs,
            rhs: c.rhs,
            slack: c.slack,
            holds: c.holds,
        }));
    }
    Ok(PropB1Report {
        passed: rows.iter().filter(|r| r.holds).count(),
        total: rows.len(),
        min_slack: rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinSpec {
    pub dim: usize,
    /// Per-coordinate truncation level of the Gaussian samples.
    pub truncation: f64,
    pub n_grid: Vec<usize>,
    pub epsilon_grid: Vec<f64>,
}

impl Default for BernsteinSpec {
    fn default() -> Self {
        Self {
            dim: 3,
            truncation: 2.0,
            n_grid: vec![10, 100],
            epsilon_grid: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinRow {
    pub n: usize,
    pub epsilon: f64,
    pub frequency: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinReport {
    /// Almost-sure norm bound `truncation * sqrt(dim)`.
    pub c: f64,
    /// Second-moment bound `dim`.
    pub sigma2: f64,
    pub replicates: usize,
    pub rows: Vec<BernsteinRow>,
}

impl BernsteinReport {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Frequency of `|mean| >= eps` for means of coordinate-wise clamped
/// standard Gaussian vectors, against the Bernstein tail.
pub fn validate_bernstein(
    spec: &BernsteinSpec,
    replicates: usize,
    seed: SeedSpec,
    workers: usize,
) -> Result<BernsteinReport> {
    ensure(spec.dim >= 1, "bernstein.dim", "must be >= 1")?;
    ensure(spec.truncation > 0.0, "bernstein.truncation", "must be > 0")?;
    ensure(replicates >= 1, "experiment.replicates", "must be >= 1")?;
    let c = spec.truncation * (spec.dim as f64).sqrt();
    let sigma2 = spec.dim as f64;
    let a = spec.truncation;

    let mut rows = Vec::new();
    for &n in &spec.n_grid {
        ensure(n >= 1, "bernstein.n", "must be >= 1")?;
        let norms = par_map(workers, replicates, |r| {
            let mut rng = seed.domain(n as u64).replicate(r).stream();
            let mut sum = vec![0.0; spec.dim];
            for _ in 0..n {
                for s in &mut sum {
                    let z: f64 = rng.sample(StandardNormal);
                    *s += z.clamp(-a, a);
                }
            }
            Ok(sum
                .iter()
                .map(|s| (s / n as f64).powi(2))
                .sum::<f64>()
                .sqrt())
        })?;
        for &epsilon in &spec.epsilon_grid {
            let hits = norms.iter().filter(|&&m| m >= epsilon).count();
            let frequency = hits as f64 / replicates as f64;
            let bound = bernstein_tail(n as u64, epsilon, c, sigma2)?;
            rows.push(BernsteinRow {
                n,
                epsilon,
                frequency,
                bound,
                holds: frequency <= bound,
            });
        }
    }
    Ok(BernsteinReport {
        c,
        sigma2,
        replicates,
        rows,
    })
}
