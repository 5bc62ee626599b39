//! Replicate-averaged convergence curves.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optimizers::{run, RunTrace};

use super::{par_map, AlgorithmSpec, ExperimentKind, ExperimentSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub label: String,
    /// `|grad F(x_t)|` averaged over replicates, for each `t`.
    pub mean_curve: Vec<f64>,
    /// Minimum over `t` of `mean_curve`.
    pub min_grad_norm: f64,
    /// Mean over `t` of `mean_curve`.
    pub avg_grad_norm: f64,
    /// Mean over replicates of each run's own time-average.
    pub per_run_avg_grad_norm: f64,
    /// Trace of replicate 0.
    #[serde(skip)]
    pub first_trace: Option<RunTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub replicates: usize,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl ConvergenceReport {
    pub fn get(&self, label: &str) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.label == label)
    }
}

pub fn convergence_study(spec: &ExperimentSpec, workers: usize) -> Result<ConvergenceReport> {
    spec.require_kind(ExperimentKind::Convergence)?;
    spec.validate()?;
    let algorithms = spec
        .algorithms
        .iter()
        .map(|alg| summarize_algorithm(spec, alg, workers))
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport {
        replicates: spec.replicates,
        algorithms,
    })
}

fn summarize_algorithm(
    spec: &ExperimentSpec,
    alg: &AlgorithmSpec,
    workers: usize,
) -> Result<AlgorithmSummary> {
    let prob = spec.problem();
    let runs = par_map(workers, spec.replicates, |r| {
        let trace = run(
            &prob,
            &alg.optimizer,
            spec.seed.replicate(r),
            &spec.start(r),
        )?;
        let norms: Vec<f64> = trace.records.iter().map(|rec| rec.true_grad_norm).collect();
        Ok((norms, (r == 0).then_some(trace)))
    })?;

    let steps = alg.optimizer.steps;
    let reps = spec.replicates as f64;
    let mut mean_curve = vec![0.0; steps];
    let mut per_run_sum = 0.0;
    let mut first_trace = None;
    for (norms, trace) in runs {
        for (m, v) in mean_curve.iter_mut().zip(&norms) {
            *m += v;
        }
        per_run_sum += norms.iter().sum::<f64>() / steps as f64;
        if trace.is_some() {
            first_trace = trace;
        }
    }
    for m in &mut mean_curve {
        *m /= reps;
    }
    Ok(AlgorithmSummary {
        label: alg.label.clone(),
        min_grad_norm: mean_curve.iter().copied().fold(f64::INFINITY, f64::min),
        avg_grad_norm: mean_curve.iter().sum::<f64>() / steps as f64,
        per_run_avg_grad_norm: per_run_sum / reps,
        mean_curve,
        first_trace,
    })
}
