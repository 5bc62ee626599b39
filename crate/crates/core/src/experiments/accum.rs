//! Per-micro-batch versus post-accumulation clipping on paired seeds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{EstimatorConfig, EstimatorMode};
use crate::optimizers::{
    run_accumulated, AccumulationConfig, ClipPlacement, OptimizerConfig, StepSchedule,
};

use super::{par_map, AlgorithmSpec, ExperimentKind, ExperimentSpec};

/// Default micro-batching for the comparison: 64 micro-batches of 8.
pub fn default_accumulation() -> AccumulationConfig {
    AccumulationConfig {
        micro_batch: 8,
        accumulation_steps: 64,
        placement: ClipPlacement::PerMicroBatch,
        gamma: 1.0,
    }
}

/// Default schedule for the comparison: warmup then cosine decay.
pub fn default_accum_optimizer() -> AlgorithmSpec {
    let acc = default_accumulation();
    let est = EstimatorConfig::new(EstimatorMode::GlobalClip, acc.effective_batch())
        .with_gamma(acc.gamma);
    let mut opt = OptimizerConfig::constant(0.1, 1000, est);
    opt.schedule = StepSchedule::WarmupCosine {
        eta_max: 0.1,
        warmup_steps: 100,
        floor_fraction: 0.1,
    };
    AlgorithmSpec {
        label: "accumulated".into(),
        optimizer: opt,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSummary {
    pub placement: ClipPlacement,
    /// `|grad F(x_t)|` averaged over replicates.
    pub mean_curve: Vec<f64>,
    /// Each replicate's time-averaged `|grad F(x_t)|`.
    pub per_run_avg_grad_norm: Vec<f64>,
    pub avg_grad_norm: f64,
    pub final_objective_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumComparison {
    pub replicates: usize,
    pub per_micro_batch: PlacementSummary,
    pub post_accumulation: PlacementSummary,
    /// Replicates where per-micro-batch clipping is no worse.
    pub per_micro_batch_wins: usize,
}

/// Runs both placements from the same seeds and starting points, using the
/// first algorithm's schedule and `spec.accumulation`.
pub fn accum_compare(spec: &ExperimentSpec, workers: usize) -> Result<AccumComparison> {
    spec.require_kind(ExperimentKind::AccumCompare)?;
    spec.validate()?;
    let base = spec
        .accumulation
        .ok_or_else(|| invalid("accum.m", "accumulation settings are required"))?;
    let opt = spec
        .algorithms
        .first()
        .ok_or_else(|| invalid("optimizer.eta", "an optimizer configuration is required"))?
        .optimizer;

    let summarize = |placement: ClipPlacement| -> Result<PlacementSummary> {
        let acc = AccumulationConfig { placement, ..base };
        let prob = spec.problem();
        let runs = par_map(workers, spec.replicates, |r| {
            let trace = run_accumulated(&prob, &acc, &opt, spec.seed.replicate(r), &spec.start(r))?;
            let final_objective = crate::problems::StochasticProblem::value(&prob, &trace.final_x)?;
            let norms: Vec<f64> = trace.records.iter().map(|rec| rec.true_grad_norm).collect();
            Ok((norms, final_objective))
        })?;
        let reps = spec.replicates as f64;
        let mut mean_curve = vec![0.0; opt.steps];
        let mut per_run = Vec::with_capacity(spec.replicates);
        let mut objective = 0.0;
        for (norms, obj) in &runs {
            for (m, v) in mean_curve.iter_mut().zip(norms) {
                *m += v;
            }
            per_run.push(norms.iter().sum::<f64>() / opt.steps as f64);
            objective += obj;
        }
        for m in &mut mean_curve {
            *m /= reps;
        }
        Ok(PlacementSummary {
            placement,
            avg_grad_norm: per_run.iter().sum::<f64>() / reps,
            per_run_avg_grad_norm: per_run,
            final_objective_mean: objective / reps,
            mean_curve,
        })
    };

    let per_micro_batch = summarize(ClipPlacement::PerMicroBatch)?;
    let post_accumulation = summarize(ClipPlacement::PostAccumulation)?;
    let per_micro_batch_wins = per_micro_batch
        .per_run_avg_grad_norm
        .iter()
        .zip(&post_accumulation.per_run_avg_grad_norm)
        .filter(|(a, b)| a <= b)
        .count();
    Ok(AccumComparison {
        replicates: spec.replicates,
        per_micro_batch,
        post_accumulation,
        per_micro_batch_wins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::LemmaSpec;
    use crate::noise::NoiseModel;
    use crate::problems::InitScheme;
    use crate::rng::SeedSpec;

    fn spec(acc: AccumulationConfig, steps: usize) -> ExperimentSpec {
        let mut alg = default_accum_optimizer();
        alg.optimizer.steps = steps;
        alg.optimizer.schedule = StepSchedule::WarmupCosine {
            eta_max: 0.1,
            warmup_steps: 5,
            floor_fraction: 0.1,
        };
        ExperimentSpec {
            kind: ExperimentKind::AccumCompare,
            noise: NoiseModel::pareto(1.2, 1.0, 10).unwrap(),
            init: InitScheme::Normal,
            algorithms: vec![alg],
            replicates: 4,
            seed: SeedSpec::new(5, 0),
            delta_grid: vec![],
            accumulation: Some(acc),
            lemma: LemmaSpec::default(),
        }
    }

    fn strip(p: &PlacementSummary) -> (&[f64], &[f64], f64, f64) {
        (
            &p.mean_curve,
            &p.per_run_avg_grad_norm,
            p.avg_grad_norm,
            p.final_objective_mean,
        )
    }

    #[test]
    fn inactive_clipping_gives_identical_summaries() {
        let acc = AccumulationConfig {
            gamma: f64::INFINITY,
            ..default_accumulation()
        };
        let cmp = accum_compare(
            &spec(
                AccumulationConfig {
                    micro_batch: 4,
                    accumulation_steps: 4,
                    ..acc
                },
                30,
            ),
            1,
        )
        .unwrap();
        assert_eq!(strip(&cmp.per_micro_batch), strip(&cmp.post_accumulation));
        assert_eq!(cmp.per_micro_batch_wins, 4);
    }

    #[test]
    fn single_micro_batch_gives_identical_summaries() {
        let acc = AccumulationConfig {
            micro_batch: 16,
            accumulation_steps: 1,
            ..default_accumulation()
        };
        let cmp = accum_compare(&spec(acc, 30), 1).unwrap();
        assert_eq!(strip(&cmp.per_micro_batch), strip(&cmp.post_accumulation));
    }

    #[test]
    fn worker_invariant() {
        let acc = AccumulationConfig {
            micro_batch: 4,
            accumulation_steps: 4,
            ..default_accumulation()
        };
        let s = spec(acc, 30);
        assert_eq!(accum_compare(&s, 1).unwrap(), accum_compare(&s, 3).unwrap());
    }

    #[test]
    fn missing_accumulation_is_an_error() {
        let mut s = spec(default_accumulation(), 5);
        s.accumulation = None;
        assert!(accum_compare(&s, 1).is_err());
    }
}
