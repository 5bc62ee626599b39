//! The update loop `x_{t+1} = x_t - eta_t * m_t` for every estimator, with
//! optional weight decay, heavy-ball momentum and gradient accumulation.
//!
//! Per iteration: draw a batch of fresh stochastic gradients, reduce it to an
//! estimate `G_t`, form `d_t = G_t + lambda * x_t`, update the momentum
//! buffer `m_t = mu * m_{t-1} + d_t` (`m_0 = 0`) and step. Clipping always
//! acts on raw stochastic gradients, before weight decay and momentum.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimators::{
    global_clip_estimate, micro_batch_clip_estimate, EstimateResult, EstimatorConfig,
};
use crate::problems::StochasticProblem;
use crate::rng::SeedSpec;
use crate::vector::Vector;

/// Absolute slack tolerated by [`check_descent_inequality`].
pub const DESCENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// Linear ramp `0 -> eta_max` over `warmup_steps`, then cosine decay to
    /// `floor_fraction * eta_max` at the final step.
    WarmupCosine {
        eta_max: f64,
        warmup_steps: usize,
        floor_fraction: f64,
    },
}

impl StepSchedule {
    /// Step size at iteration `t` (1-based) of `total`.
    pub fn step_size(&self, t: usize, total: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::WarmupCosine {
                eta_max,
                warmup_steps,
                floor_fraction,
            } => {
                if t <= warmup_steps {
                    eta_max * t as f64 / warmup_steps as f64
                } else {
                    let span = total.saturating_sub(warmup_steps).max(1) as f64;
                    let progress = ((t - warmup_steps) as f64 / span).min(1.0);
                    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                    eta_max * (floor_fraction + (1.0 - floor_fraction) * cosine)
                }
            }
        }
    }

    pub fn max_step(&self) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::WarmupCosine { eta_max, .. } => eta_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { eta } => ensure(
                eta.is_finite() && eta > 0.0,
                "optimizer.eta",
                format!("must be > 0, got {eta}"),
            ),
            StepSchedule::WarmupCosine {
                eta_max,
                floor_fraction,
                ..
            } => {
                ensure(
                    eta_max.is_finite() && eta_max > 0.0,
                    "optimizer.eta",
                    format!("must be > 0, got {eta_max}"),
                )?;
                ensure(
                    floor_fraction > 0.0 && floor_fraction <= 1.0,
                    "optimizer.floor_fraction",
                    format!("must lie in (0, 1], got {floor_fraction}"),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub schedule: StepSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub estimator: EstimatorConfig,
    /// Reject any step size `>= 1/L`, the regime the convergence guarantees
    /// cover.
    pub theorem_mode: bool,
}

impl OptimizerConfig {
    /// Constant step size, no momentum, no weight decay.
    pub fn constant(eta: f64, steps: usize, estimator: EstimatorConfig) -> Self {
        Self {
            schedule: StepSchedule::Constant { eta },
            momentum: 0.0,
            weight_decay: 0.0,
            steps,
            estimator,
            theorem_mode: false,
        }
    }

    pub fn with_theorem_mode(mut self, on: bool) -> Self {
        self.theorem_mode = on;
        self
    }

    /// Everything except the estimator.
    pub fn validate_update(&self, smoothness: f64) -> Result<()> {
        self.schedule.validate()?;
        ensure(
            (0.0..1.0).contains(&self.momentum),
            "optimizer.momentum",
            format!("must lie in [0, 1), got {}", self.momentum),
        )?;
        ensure(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "optimizer.weight_decay",
            format!("must be >= 0, got {}", self.weight_decay),
        )?;
        ensure(self.steps >= 1, "optimizer.steps", "must be >= 1")?;
        if self.theorem_mode {
            let eta = self.schedule.max_step();
            ensure(
                eta * smoothness < 1.0,
                "optimizer.eta",
                format!("step size {eta} violates eta < 1/L = {}", 1.0 / smoothness),
            )?;
        }
        Ok(())
    }

    pub fn validate(&self, smoothness: f64) -> Result<()> {
        self.validate_update(smoothness)?;
        self.estimator.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipPlacement {
    /// Clip every micro-batch mean before accumulating.
    PerMicroBatch,
    /// Clip once after all accumulation steps.
    PostAccumulation,
}

impl ClipPlacement {
    pub const ALL: [ClipPlacement; 2] = [
        ClipPlacement::PerMicroBatch,
        ClipPlacement::PostAccumulation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClipPlacement::PerMicroBatch => "per-micro-batch",
            ClipPlacement::PostAccumulation => "post-accumulation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Gradient accumulation: `accumulation_steps` micro-batches of
/// `micro_batch` samples per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccumulationConfig {
    pub micro_batch: usize,
    pub accumulation_steps: usize,
    pub placement: ClipPlacement,
    pub gamma: f64,
}

impl AccumulationConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation_steps
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.micro_batch >= 1, "accum.m", "must be >= 1")?;
        ensure(self.accumulation_steps >= 1, "accum.k", "must be >= 1")?;
        ensure(
            self.gamma > 0.0 && !self.gamma.is_nan(),
            "accum.gamma",
            format!("must be > 0, got {}", self.gamma),
        )
    }

    /// Reduces one full accumulation window (`m * k` gradients in draw
    /// order) to the update estimate.
    pub fn estimate(&self, grads: &[Vector]) -> Result<EstimateResult> {
        match self.placement {
            ClipPlacement::PerMicroBatch => {
                micro_batch_clip_estimate(grads, self.micro_batch, self.gamma)
            }
            ClipPlacement::PostAccumulation => global_clip_estimate(grads, self.gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub eta: f64,
    /// `|grad F(x_t)|`
    pub true_grad_norm: f64,
    /// `|grad F(x_t) - G_t|`
    pub est_error: f64,
    /// `F(x_t)`
    pub objective: f64,
    pub clipped_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub x1: Vector,
    pub final_x: Vector,
    /// `F(x_1) - F*`
    pub init_gap: f64,
    pub seed: SeedSpec,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(1/T) * sum_t |grad F(x_t)|`.
    pub fn avg_grad_norm(&self) -> f64 {
        self.records.iter().map(|r| r.true_grad_norm).sum::<f64>() / self.len() as f64
    }
}

/// Runs `opt.steps` iterations from `x1`, drawing all noise from `seed`.
pub fn run<P: StochasticProblem + ?Sized>(
    prob: &P,
    opt: &OptimizerConfig,
    seed: SeedSpec,
    x1: &Vector,
) -> Result<RunTrace> {
    opt.validate(prob.smoothness())?;
    let est = opt.estimator;
    run_loop(prob, opt, seed, x1, est.batch_size, |b| est.estimate(b))
}

/// Like [`run`], but each step consumes `m * k` gradients reduced per
/// `acc.placement`; `opt.estimator` is not consulted.
pub fn run_accumulated<P: StochasticProblem + ?Sized>(
    prob: &P,
    acc: &AccumulationConfig,
    opt: &OptimizerConfig,
    seed: SeedSpec,
    x1: &Vector,
) -> Result<RunTrace> {
    acc.validate()?;
    opt.validate_update(prob.smoothness())?;
    run_loop(prob, opt, seed, x1, acc.effective_batch(), |b| {
        acc.estimate(b)
    })
}

fn run_loop<P, F>(
    prob: &P,
    opt: &OptimizerConfig,
    seed: SeedSpec,
    x1: &Vector,
    batch_len: usize,
    mut reduce: F,
) -> Result<RunTrace>
where
    P: StochasticProblem + ?Sized,
    F: FnMut(&[Vector]) -> Result<EstimateResult>,
{
    let dim = prob.dim();
    x1.check_dim(dim)?;
    let total = opt.steps;
    let mut rng = seed.stream();
    let mut x = x1.clone();
    let mut batch = vec![Vector::zeros(dim); batch_len];
    let mut velocity: Option<Vector> = None;
    let mut records = Vec::with_capacity(total);

    for t in 1..=total {
        let eta = opt.schedule.step_size(t, total);
        for g in batch.iter_mut() {
            prob.stochastic_gradient_into(&x, &mut rng, g)?;
        }
        let est = reduce(&batch)?;
        let grad = prob.full_gradient(&x)?;
        records.push(IterationRecord {
            t,
            eta,
            true_grad_norm: grad.norm(),
            est_error: grad.distance(&est.estimate)?,
            objective: prob.value(&x)?,
            clipped_count: est.clipped_count,
        });

        let mut direction = est.estimate;
        if opt.weight_decay > 0.0 {
            direction.axpy(opt.weight_decay, &x);
        }
        if opt.momentum > 0.0 {
            let v = velocity.get_or_insert_with(|| Vector::zeros(dim));
            for (vi, di) in v.as_mut_slice().iter_mut().zip(direction.as_slice()) {
                *vi = opt.momentum * *vi + di;
            }
            direction.copy_from(v);
        }
        x.axpy(-eta, &direction);
    }

    Ok(RunTrace {
        records,
        init_gap: prob.init_gap(x1)?,
        x1: x1.clone(),
        final_x: x,
        seed,
    })
}

/// Both sides of `sum eta_t |grad F(x_t)|^2 <= 2 Delta_1 + sum eta_t |grad F(x_t) - G_t|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`
    pub slack: f64,
    /// `slack >= -DESCENT_TOLERANCE`
    pub holds: bool,
}

/// Evaluates the pathwise descent inequality on a trace produced with
/// `eta_t < 1/L`, no momentum and no weight decay.
pub fn check_descent_inequality(trace: &RunTrace, init_gap: f64) -> Result<DescentCheck> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut lhs = 0.0;
    let mut noise = 0.0;
    for r in &trace.records {
        if !(r.eta.is_finite() && r.true_grad_norm.is_finite() && r.est_error.is_finite()) {
            return Err(Error::NonFiniteTrace { t: r.t });
        }
        lhs += r.eta * r.true_grad_norm * r.true_grad_norm;
        noise += r.eta * r.est_error * r.est_error;
    }
    let rhs = 2.0 * init_gap + noise;
    let slack = rhs - lhs;
    Ok(DescentCheck {
        lhs,
        rhs,
        slack,
        holds: slack >= -DESCENT_TOLERANCE,
    })
}
