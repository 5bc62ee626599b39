//! Batch gradient estimators.
//!
//! Every estimator here is a factor-weighted mean `(1/n) * sum_k f_k g_k`
//! computed by one shared kernel, in list order. With all factors equal to
//! one this is bit-for-bit the plain mean, which is what makes inactive
//! clipping indistinguishable from no clipping on identical streams.
//!
//! The increasing-threshold estimator uses threshold `alpha * k^(1/beta)` for
//! the `k`-th gradient (1-based, arrival order). It is therefore not
//! permutation invariant; for i.i.d. samples its distribution is unaffected.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Error, Result};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    PlainMean,
    PsClipIncreasing,
    PsClipConstant,
    GlobalClip,
    Normalize,
}

impl EstimatorMode {
    pub const ALL: [EstimatorMode; 5] = [
        EstimatorMode::PlainMean,
        EstimatorMode::PsClipIncreasing,
        EstimatorMode::PsClipConstant,
        EstimatorMode::GlobalClip,
        EstimatorMode::Normalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::PlainMean => "plain-mean",
            EstimatorMode::PsClipIncreasing => "ps-clip-increasing",
            EstimatorMode::PsClipConstant => "ps-clip-constant",
            EstimatorMode::GlobalClip => "global-clip",
            EstimatorMode::Normalize => "normalize",
        }
    }

    /// Conventional optimizer name for the update rule built on this mode.
    pub fn algorithm_name(self) -> &'static str {
        match self {
            EstimatorMode::PlainMean => "sgd",
            EstimatorMode::PsClipIncreasing => "ps-clip-sgd",
            EstimatorMode::PsClipConstant => "ps-clip-constant-sgd",
            EstimatorMode::GlobalClip => "clip-sgd",
            EstimatorMode::Normalize => "normalized-sgd",
        }
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                format!(
                    "unknown estimator mode `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Which estimator to use and its parameters. Parameters a mode does not
/// read are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
}

impl EstimatorConfig {
    pub fn new(mode: EstimatorMode, batch_size: usize) -> Self {
        Self {
            mode,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            batch_size,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// `alpha, gamma > 0`, `beta` in `[1, 2]`, `batch_size >= 1`.
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.alpha.is_finite() && self.alpha > 0.0,
            "estimator.alpha",
            format!("must be > 0, got {}", self.alpha),
        )?;
        ensure(
            (1.0..=2.0).contains(&self.beta),
            "estimator.beta",
            format!("must lie in [1, 2], got {}", self.beta),
        )?;
        ensure(
            self.gamma > 0.0 && !self.gamma.is_nan(),
            "estimator.gamma",
            format!("must be > 0, got {}", self.gamma),
        )?;
        ensure(self.batch_size >= 1, "estimator.batch_size", "must be >= 1")
    }

    pub fn estimate(&self, grads: &[Vector]) -> Result<EstimateResult> {
        match self.mode {
            EstimatorMode::PlainMean => plain_mean_estimate(grads),
            EstimatorMode::PsClipIncreasing => ps_clip_estimate(grads, self.alpha, self.beta),
            EstimatorMode::PsClipConstant => ps_clip_constant_estimate(grads, self.gamma),
            EstimatorMode::GlobalClip => global_clip_estimate(grads, self.gamma),
            EstimatorMode::Normalize => normalize_estimate(grads),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimate: Vector,
    /// Number of factors strictly below one.
    pub clipped_count: usize,
    pub per_sample_factors: Vec<f64>,
}

impl EstimateResult {
    fn from_factors(estimate: Vector, factors: Vec<f64>) -> Self {
        Self {
            estimate,
            clipped_count: factors.iter().filter(|&&f| f < 1.0).count(),
            per_sample_factors: factors,
        }
    }
}

/// `min{1, threshold / |g|}`, and 1 for the zero vector.
pub fn clip_factor(g: &Vector, threshold: f64) -> Result<f64> {
    check_threshold(threshold, "threshold")?;
    Ok(factor_for_norm(g.norm(), threshold))
}

#[inline]
fn factor_for_norm(norm: f64, threshold: f64) -> f64 {
    if norm <= threshold {
        1.0
    } else {
        threshold / norm
    }
}

fn check_threshold(t: f64, name: &'static str) -> Result<()> {
    ensure(
        t > 0.0 && !t.is_nan(),
        name,
        format!("must be > 0, got {t}"),
    )
}

/// Returns the common dimension.
fn check_batch(grads: &[Vector]) -> Result<usize> {
    let first = grads.first().ok_or(Error::NoSamples)?;
    let dim = first.dim();
    grads.iter().try_for_each(|g| g.check_dim(dim))?;
    Ok(dim)
}

/// `(1/n) * sum_k factors[k] * grads[k]`, accumulated in list order.
fn weighted_mean(grads: &[Vector], factors: impl IntoIterator<Item = f64>) -> Vector {
    let mut acc = Vector::zeros(grads[0].dim());
    for (g, f) in grads.iter().zip(factors) {
        acc.axpy(f, g);
    }
    let n = grads.len() as f64;
    acc.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    acc
}

fn clip_each(grads: &[Vector], thresholds: impl Iterator<Item = f64>) -> EstimateResult {
    let factors: Vec<f64> = grads
        .iter()
        .zip(thresholds)
        .map(|(g, t)| factor_for_norm(g.norm(), t))
        .collect();
    let estimate = weighted_mean(grads, factors.iter().copied());
    EstimateResult::from_factors(estimate, factors)
}

pub fn plain_mean_estimate(grads: &[Vector]) -> Result<EstimateResult> {
    check_batch(grads)?;
    let estimate = weighted_mean(grads, std::iter::repeat(1.0));
    Ok(EstimateResult::from_factors(
        estimate,
        vec![1.0; grads.len()],
    ))
}

/// Per-sample clipping with increasing thresholds `alpha * k^(1/beta)`.
pub fn ps_clip_estimate(grads: &[Vector], alpha: f64, beta: f64) -> Result<EstimateResult> {
    check_batch(grads)?;
    check_threshold(alpha, "alpha")?;
    ensure(
        beta.is_finite() && beta > 0.0,
        "beta",
        format!("must be > 0, got {beta}"),
    )?;
    let inv_beta = 1.0 / beta;
    let thresholds = (1..=grads.len()).map(|k| alpha * (k as f64).powf(inv_beta));
    Ok(clip_each(grads, thresholds))
}

/// Per-sample clipping with the same threshold for every sample.
pub fn ps_clip_constant_estimate(grads: &[Vector], gamma: f64) -> Result<EstimateResult> {
    check_batch(grads)?;
    check_threshold(gamma, "gamma")?;
    Ok(clip_each(grads, std::iter::repeat(gamma)))
}

/// Clips the batch mean once. Every sample carries the mean's factor, so
/// `clipped_count` is either 0 or `n`.
pub fn global_clip_estimate(grads: &[Vector], gamma: f64) -> Result<EstimateResult> {
    check_batch(grads)?;
    check_threshold(gamma, "gamma")?;
    let mean = weighted_mean(grads, std::iter::repeat(1.0));
    let c = factor_for_norm(mean.norm(), gamma);
    let estimate = if c < 1.0 {
        weighted_mean(grads, std::iter::repeat(c))
    } else {
        mean
    };
    Ok(EstimateResult::from_factors(estimate, vec![c; grads.len()]))
}

/// Splits `grads` into consecutive micro-batches of `micro` samples, clips
/// each micro-batch mean to `gamma` and averages the clipped means.
pub fn micro_batch_clip_estimate(
    grads: &[Vector],
    micro: usize,
    gamma: f64,
) -> Result<EstimateResult> {
    check_batch(grads)?;
    check_threshold(gamma, "gamma")?;
    ensure(
        micro >= 1 && grads.len().is_multiple_of(micro),
        "accum.m",
        format!(
            "micro-batch size {micro} does not divide batch of {}",
            grads.len()
        ),
    )?;
    let mut factors = Vec::with_capacity(grads.len());
    for chunk in grads.chunks(micro) {
        let mean = weighted_mean(chunk, std::iter::repeat(1.0));
        let c = factor_for_norm(mean.norm(), gamma);
        factors.extend(std::iter::repeat_n(c, chunk.len()));
    }
    let estimate = weighted_mean(grads, factors.iter().copied());
    Ok(EstimateResult::from_factors(estimate, factors))
}

/// Batch mean scaled to unit norm; a zero mean yields the zero vector.
pub fn normalize_estimate(grads: &[Vector]) -> Result<EstimateResult> {
    check_batch(grads)?;
    let mut mean = weighted_mean(grads, std::iter::repeat(1.0));
    let norm = mean.norm();
    if norm > 0.0 {
        mean.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
    }
    Ok(EstimateResult::from_factors(mean, vec![1.0; grads.len()]))
}

/// `sigma / (ln(1/delta) + 1/4)^(1/p)`, the per-sample scale that yields a
/// `1 - delta` guarantee.
pub fn alpha_for_confidence(sigma: f64, p: f64, delta: f64) -> Result<f64> {
    ensure(
        sigma.is_finite() && sigma > 0.0,
        "sigma",
        format!("must be > 0, got {sigma}"),
    )?;
    ensure(
        p > 1.0 && p <= 2.0,
        "p",
        format!("must lie in (1, 2], got {p}"),
    )?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(sigma / ((1.0 / delta).ln() + 0.25).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn clip_factor_examples() {
        assert_eq!(clip_factor(&Vector::zeros(2), 0.3).unwrap(), 1.0);
        assert_eq!(clip_factor(&Vector::from([3.0, 4.0]), 2.0).unwrap(), 0.4);
        assert_eq!(clip_factor(&Vector::from([0.6, 0.8]), 2.0).unwrap(), 1.0);
        assert!(clip_factor(&Vector::from([1.0]), 0.0).is_err());
        assert!(clip_factor(&Vector::from([1.0]), -1.0).is_err());
    }

    #[test]
    fn ps_clip_hand_example() {
        let grads = [Vector::from([3.0, 4.0]), Vector::from([0.0, 1.0])];
        let r = ps_clip_estimate(&grads, 1.0, 1.0).unwrap();
        assert_eq!(r.per_sample_factors.len(), 2);
        assert!((r.per_sample_factors[0] - 0.2).abs() < 1e-15);
        assert_eq!(r.per_sample_factors[1], 1.0);
        assert!(close(&r.estimate, &Vector::from([0.3, 0.9]), 1e-12));
        assert_eq!(r.clipped_count, 1);
    }

    #[test]
    fn ps_clip_single_sample() {
        let g = Vector::from([6.0, 8.0]);
        let r = ps_clip_estimate(std::slice::from_ref(&g), 1.0, 2.0).unwrap();
        assert!(close(&r.estimate, &g.scaled(0.1), 1e-15));
        assert_eq!(r.clipped_count, 1);
    }

    #[test]
    fn ps_clip_small_norms_is_plain_mean() {
        let grads = [
            Vector::from([0.1, 0.2]),
            Vector::from([-0.3, 0.05]),
            Vector::from([0.0, 0.0]),
        ];
        let r = ps_clip_estimate(&grads, 1.0, 1.5).unwrap();
        assert_eq!(r.estimate, plain_mean_estimate(&grads).unwrap().estimate);
        assert_eq!(r.clipped_count, 0);
    }

    #[test]
    fn ps_clip_constant_examples() {
        let grads = [Vector::from([3.0, 4.0]), Vector::from([0.0, 1.0])];
        let r = ps_clip_constant_estimate(&grads, 1.0).unwrap();
        assert!(close(&r.estimate, &Vector::from([0.3, 0.9]), 1e-12));
        let wide = ps_clip_constant_estimate(&grads, 1e6).unwrap();
        assert_eq!(wide.estimate, plain_mean_estimate(&grads).unwrap().estimate);
        let swapped = [grads[1].clone(), grads[0].clone()];
        let s = ps_clip_constant_estimate(&swapped, 1.0).unwrap();
        assert!(close(&s.estimate, &r.estimate, 1e-15));
    }

    #[test]
    fn global_clip_examples() {
        let r = global_clip_estimate(&[Vector::from([6.0, 8.0])], 5.0).unwrap();
        assert_eq!(r.estimate, Vector::from([3.0, 4.0]));
        assert_eq!(r.clipped_count, 1);
        let cancel = [Vector::from([2.0, 0.0]), Vector::from([-2.0, 0.0])];
        let r = global_clip_estimate(&cancel, 0.01).unwrap();
        assert_eq!(r.estimate, Vector::zeros(2));
        assert_eq!(r.clipped_count, 0);
        let small = [Vector::from([0.1, 0.0]), Vector::from([0.3, 0.0])];
        assert_eq!(
            global_clip_estimate(&small, 1.0).unwrap().estimate,
            plain_mean_estimate(&small).unwrap().estimate
        );
    }

    #[test]
    fn global_clip_counts_whole_batch() {
        let grads = [
            Vector::from([10.0, 0.0]),
            Vector::from([12.0, 0.0]),
            Vector::from([8.0, 0.0]),
        ];
        let r = global_clip_estimate(&grads, 1.0).unwrap();
        assert_eq!(r.clipped_count, 3);
        assert!((r.estimate.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let r = normalize_estimate(&[Vector::from([3.0, 4.0])]).unwrap();
        assert!(close(&r.estimate, &Vector::from([0.6, 0.8]), 1e-15));
        let cancel = [Vector::from([2.0, 0.0]), Vector::from([-2.0, 0.0])];
        assert_eq!(
            normalize_estimate(&cancel).unwrap().estimate,
            Vector::zeros(2)
        );
    }

    #[test]
    fn micro_batch_hand_example() {
        // Two micro-batches of one sample: means (6, 8) and (0, 1).
        let grads = [Vector::from([6.0, 8.0]), Vector::from([0.0, 1.0])];
        let r = micro_batch_clip_estimate(&grads, 1, 5.0).unwrap();
        assert!(close(&r.estimate, &Vector::from([1.5, 2.5]), 1e-15));
        assert_eq!(r.clipped_count, 1);
        assert!(micro_batch_clip_estimate(&grads, 3, 5.0).is_err());
    }

    #[test]
    fn batch_errors() {
        assert!(matches!(plain_mean_estimate(&[]), Err(Error::NoSamples)));
        assert!(matches!(
            ps_clip_estimate(&[], 1.0, 1.0),
            Err(Error::NoSamples)
        ));
        let mixed = [Vector::from([1.0]), Vector::from([1.0, 2.0])];
        assert!(matches!(
            ps_clip_constant_estimate(&mixed, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(global_clip_estimate(&mixed, 1.0).is_err());
        assert!(normalize_estimate(&mixed).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = EstimatorConfig::new(EstimatorMode::PsClipIncreasing, 64);
        assert!(ok.validate().is_ok());
        assert!(ok.with_beta(2.0).validate().is_ok());
        let err = ok.with_beta(3.0).validate().unwrap_err();
        assert!(err.to_string().contains("estimator.beta"), "{err}");
        assert!(ok.with_alpha(0.0).validate().is_err());
        assert!(ok.with_gamma(-1.0).validate().is_err());
        assert!(EstimatorConfig::new(EstimatorMode::PlainMean, 0)
            .validate()
            .is_err());
        assert!(ok.with_gamma(f64::INFINITY).validate().is_ok());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EstimatorMode::ALL {
            assert_eq!(m.name().parse::<EstimatorMode>().unwrap(), m);
        }
        assert!("ps-clip".parse::<EstimatorMode>().is_err());
    }

    #[test]
    fn alpha_for_confidence_examples() {
        let a = alpha_for_confidence(1.0, 2.0, (-0.75f64).exp()).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        let near_one = alpha_for_confidence(1.0, 2.0, 1.0 - 1e-12).unwrap();
        assert!((near_one - 2.0).abs() < 1e-9);
        let d = 0.05;
        let one = alpha_for_confidence(1.0, 1.5, d).unwrap();
        assert_eq!(alpha_for_confidence(2.0, 1.5, d).unwrap(), 2.0 * one);
        assert!(alpha_for_confidence(1.0, 1.0, 0.1).is_err());
        assert!(alpha_for_confidence(1.0, 2.5, 0.1).is_err());
        assert!(alpha_for_confidence(1.0, 2.0, 1.0).is_err());
        assert!(alpha_for_confidence(0.0, 2.0, 0.5).is_err());
    }

    fn batch() -> impl Strategy<Value = Vec<Vector>> {
        (1usize..6).prop_flat_map(|d| {
            prop::collection::vec(
                prop::collection::vec(-50.0..50.0f64, d).prop_map(|v| Vector::new(v).unwrap()),
                1..40,
            )
        })
    }

    proptest! {
        #[test]
        fn estimate_norm_bounded_by_mean_threshold(
            grads in batch(), alpha in 0.01..10.0f64, beta in 1.0..2.0f64, gamma in 0.01..10.0f64,
        ) {
            let n = grads.len();
            let inc = ps_clip_estimate(&grads, alpha, beta).unwrap();
            let sum_inc: f64 = (1..=n).map(|k| alpha * (k as f64).powf(1.0 / beta)).sum();
            prop_assert!(inc.estimate.norm() <= sum_inc / n as f64 * (1.0 + 1e-12));
            prop_assert!(inc.estimate.norm() <= alpha * (n as f64).powf(1.0 / beta) * (1.0 + 1e-12));
            let con = ps_clip_constant_estimate(&grads, gamma).unwrap();
            prop_assert!(con.estimate.norm() <= gamma * (1.0 + 1e-12));
            let glob = global_clip_estimate(&grads, gamma).unwrap();
            prop_assert!(glob.estimate.norm() <= gamma * (1.0 + 1e-12));
        }

        #[test]
        fn factors_in_unit_interval(grads in batch(), alpha in 0.01..10.0f64, beta in 1.0..2.0f64) {
            let r = ps_clip_estimate(&grads, alpha, beta).unwrap();
            for (k, (f, g)) in r.per_sample_factors.iter().zip(&grads).enumerate() {
                prop_assert!(*f > 0.0 && *f <= 1.0);
                let t = alpha * ((k + 1) as f64).powf(1.0 / beta);
                prop_assert_eq!(*f == 1.0, g.norm() <= t);
            }
            prop_assert_eq!(r.clipped_count, r.per_sample_factors.iter().filter(|f| **f < 1.0).count());
        }

        #[test]
        fn raising_threshold_never_clips_more(
            grads in batch(), alpha in 0.01..10.0f64, bump in 0.0..10.0f64, beta in 1.0..2.0f64,
        ) {
            let lo = ps_clip_estimate(&grads, alpha, beta).unwrap().clipped_count;
            let hi = ps_clip_estimate(&grads, alpha + bump, beta).unwrap().clipped_count;
            prop_assert!(hi <= lo);
            let lo = ps_clip_constant_estimate(&grads, alpha).unwrap().clipped_count;
            let hi = ps_clip_constant_estimate(&grads, alpha + bump).unwrap().clipped_count;
            prop_assert!(hi <= lo);
            let lo = global_clip_estimate(&grads, alpha).unwrap().clipped_count;
            let hi = global_clip_estimate(&grads, alpha + bump).unwrap().clipped_count;
            prop_assert!(hi <= lo);
        }

        #[test]
        fn normalize_is_scale_invariant(grads in batch(), c in 0.01..100.0f64) {
            let a = normalize_estimate(&grads).unwrap().estimate;
            let scaled: Vec<Vector> = grads.iter().map(|g| g.scaled(c)).collect();
            let b = normalize_estimate(&scaled).unwrap().estimate;
            // near-cancelling means amplify rounding; compare only well-conditioned batches
            let mean_norm = plain_mean_estimate(&grads).unwrap().estimate.norm();
            let max_norm = grads.iter().map(Vector::norm).fold(0.0, f64::max);
            prop_assume!(mean_norm > 1e-6 * max_norm);
            prop_assert!(close(&a, &b, 1e-8));
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn inactive_thresholds_are_plain_mean_bitwise(grads in batch()) {
            let max = grads.iter().map(Vector::norm).fold(0.0, f64::max);
            let plain = plain_mean_estimate(&grads).unwrap().estimate;
            prop_assert_eq!(&ps_clip_estimate(&grads, max + 1.0, 1.3).unwrap().estimate, &plain);
            prop_assert_eq!(&ps_clip_constant_estimate(&grads, max + 1.0).unwrap().estimate, &plain);
            prop_assert_eq!(&global_clip_estimate(&grads, max + 1.0).unwrap().estimate, &plain);
            prop_assert_eq!(&micro_batch_clip_estimate(&grads, 1, max + 1.0).unwrap().estimate, &plain);
        }
    }

    #[test]
    fn normalize_unit_norm_on_random_batches() {
        use crate::noise::NoiseModel;
        use crate::rng::SeedSpec;
        let m = NoiseModel::pareto(1.5, 1.0, 4).unwrap();
        let mut rng = SeedSpec::new(11, 0).stream();
        for _ in 0..1000 {
            let grads: Vec<Vector> = (0..8).map(|_| m.sample(&mut rng)).collect();
            let r = normalize_estimate(&grads).unwrap();
            assert!((r.estimate.norm() - 1.0).abs() < 1e-12);
        }
    }
}
