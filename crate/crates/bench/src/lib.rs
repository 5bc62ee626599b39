//! Shared fixtures for the criterion benchmarks.

use htopt_core::{NoiseModel, Quadratic, SeedSpec, StochasticProblem, Vector};

/// Heavy-tailed quadratic with unit-scale noise.
pub fn problem(p: f64, dim: usize) -> Quadratic {
    Quadratic::new(NoiseModel::pareto(p, 1.0, dim).expect("valid noise"))
}

/// `n` stochastic gradients at the all-ones point.
pub fn gradient_batch(p: f64, dim: usize, n: usize, seed: u64) -> Vec<Vector> {
    let prob = problem(p, dim);
    let x = Vector::new(vec![1.0; dim]).expect("dim >= 1");
    let mut rng = SeedSpec::new(seed, 0).stream();
    (0..n)
        .map(|_| {
            prob.stochastic_gradient(&x, &mut rng)
                .expect("dimensions match")
        })
        .collect()
}
