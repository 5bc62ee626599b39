//! Closed-form convergence bounds and prescribed batch sizes.
//!
//! All logarithms are natural. Inputs are validated and out-of-range values
//! are errors, never clamped.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Largest confidence level accepted by the squared-log bound, `e^{-3/4}`.
pub fn remark_delta_max() -> f64 {
    (-0.75f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Initial gap `F(x_1) - F*`.
    pub delta1: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Noise moment scale, `E|noise|^p <= sigma^p`.
    pub sigma: f64,
    /// Tail index in `(1, 2]`.
    pub p: f64,
    /// Iterations.
    pub t: u64,
    /// Batch size.
    pub n: u64,
    /// Failure probability in `(0, 1)`.
    pub delta: f64,
    /// Step sizes `eta_1..eta_T`; only the finite-horizon theorems read them.
    pub eta: Vec<f64>,
}

impl BoundInputs {
    /// Inputs with the constant step `eta` repeated `t` times.
    #[allow(clippy::too_many_arguments)]
    pub fn constant_step(
        delta1: f64,
        l: f64,
        sigma: f64,
        p: f64,
        t: u64,
        n: u64,
        delta: f64,
        eta: f64,
    ) -> Self {
        Self {
            delta1,
            l,
            sigma,
            p,
            t,
            n,
            delta,
            eta: vec![eta; t as usize],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.delta1 >= 0.0 && self.delta1.is_finite(),
            "bounds.delta1",
            format!("must be >= 0, got {}", self.delta1),
        )?;
        ensure(
            self.l > 0.0 && self.l.is_finite(),
            "bounds.L",
            format!("must be > 0, got {}", self.l),
        )?;
        ensure(
            self.sigma > 0.0 && self.sigma.is_finite(),
            "bounds.sigma",
            format!("must be > 0, got {}", self.sigma),
        )?;
        ensure(
            self.p > 1.0 && self.p <= 2.0,
            "bounds.p",
            format!("must lie in (1, 2], got {}", self.p),
        )?;
        ensure(self.t >= 1, "bounds.T", "must be >= 1")?;
        ensure(self.n >= 1, "bounds.n", "must be >= 1")?;
        ensure(
            self.delta > 0.0 && self.delta < 1.0,
            "bounds.delta",
            format!("must lie in (0, 1), got {}", self.delta),
        )
    }

    fn validate_steps(&self) -> Result<f64> {
        self.validate()?;
        ensure(
            self.eta.len() as u64 == self.t,
            "bounds.eta",
            format!("expected {} step sizes, got {}", self.t, self.eta.len()),
        )?;
        for &eta in &self.eta {
            ensure(
                eta > 0.0 && eta * self.l < 1.0,
                "bounds.eta",
                format!("step size {eta} outside (0, 1/L)"),
            )?;
        }
        Ok(self.eta.iter().sum())
    }

    /// `2(p-1)/p`
    fn rate(&self) -> f64 {
        2.0 * (self.p - 1.0) / self.p
    }

    /// `ln(1/delta) + ln T`
    fn log_terms(&self) -> f64 {
        (1.0 / self.delta).ln() + (self.t as f64).ln()
    }
}

/// `2 Delta_1 / sum eta + 8 sigma^2 n^{-2(p-1)/p}`
pub fn thm1_rhs(inp: &BoundInputs) -> Result<f64> {
    let sum_eta = inp.validate_steps()?;
    let noise = 8.0 * inp.sigma * inp.sigma * (inp.n as f64).powf(-inp.rate());
    Ok(2.0 * inp.delta1 / sum_eta + noise)
}

/// `ceil(max{1, (sigma^2 T / (Delta_1 L))^{p / (2(p-1))}})`
pub fn cor1_batch(inp: &BoundInputs) -> Result<u64> {
    inp.validate()?;
    ensure(
        inp.delta1 > 0.0,
        "bounds.delta1",
        "must be > 0 for the batch-size formula",
    )?;
    let ratio = inp.sigma * inp.sigma * inp.t as f64 / (inp.delta1 * inp.l);
    let raw = ratio.powf(1.0 / inp.rate()).max(1.0);
    // Absorb rounding noise so exact powers such as 4^1.5 are not bumped up.
    let nearest = raw.round();
    let n = if (raw - nearest).abs() <= 1e-9 * nearest {
        nearest
    } else {
        raw.ceil()
    };
    ensure(
        n.is_finite() && n < u64::MAX as f64,
        "bounds.n",
        format!("prescribed batch size {raw} overflows"),
    )?;
    Ok(n as u64)
}

/// `9 Delta_1 L / T`
pub fn cor1_rhs(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    Ok(9.0 * inp.delta1 * inp.l / inp.t as f64)
}

/// `2 Delta_1 / sum eta + 49 sigma^2 ((ln(1/delta) + ln T + 1/4) / n)^{2(p-1)/p}`
pub fn thm2_rhs(inp: &BoundInputs) -> Result<f64> {
    let sum_eta = inp.validate_steps()?;
    let base = (inp.log_terms() + 0.25) / inp.n as f64;
    Ok(2.0 * inp.delta1 / sum_eta + 49.0 * inp.sigma * inp.sigma * base.powf(inp.rate()))
}

/// `(3 + 49 (ln(1/delta) + ln T))^{2(p-1)/p} Delta_1 L / T`
pub fn cor2_rhs(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let factor = (3.0 + 49.0 * inp.log_terms()).powf(inp.rate());
    Ok(factor * inp.delta1 * inp.l / inp.t as f64)
}

fn ensure_remark_delta(inp: &BoundInputs) -> Result<()> {
    ensure(
        inp.delta <= remark_delta_max(),
        "bounds.delta",
        format!(
            "must be <= e^(-3/4) for the squared-log bound, got {}",
            inp.delta
        ),
    )
}

/// `(3 + 49 (ln(1/delta) + ln T))^2 Delta_1 L / T`, for `delta <= e^{-3/4}`.
pub fn remark_rhs(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    ensure_remark_delta(inp)?;
    let factor = 3.0 + 49.0 * inp.log_terms();
    Ok(factor * factor * inp.delta1 * inp.l / inp.t as f64)
}

/// `2 Delta_1 / sum eta + 49 sigma^2 (ln(1/delta) + ln T + 1/4)^2 / n^{2(p-1)/p}`,
/// for `delta <= e^{-3/4}`.
pub fn remark_thm_rhs(inp: &BoundInputs) -> Result<f64> {
    let sum_eta = inp.validate_steps()?;
    ensure_remark_delta(inp)?;
    let logs = inp.log_terms() + 0.25;
    let noise = 49.0 * inp.sigma * inp.sigma * logs * logs / (inp.n as f64).powf(inp.rate());
    Ok(2.0 * inp.delta1 / sum_eta + noise)
}

/// `exp(-n eps^2 / (8 sigma^2 + c eps) + 1/4)`: bound on
/// `P(|mean of n bounded zero-mean vectors| >= eps)`.
pub fn bernstein_tail(n: u64, epsilon: f64, c: f64, sigma2: f64) -> Result<f64> {
    ensure(n >= 1, "bernstein.n", "must be >= 1")?;
    ensure(
        epsilon > 0.0 && epsilon.is_finite(),
        "bernstein.epsilon",
        format!("must be > 0, got {epsilon}"),
    )?;
    ensure(
        c > 0.0 && c.is_finite(),
        "bernstein.c",
        format!("must be > 0, got {c}"),
    )?;
    ensure(
        sigma2 > 0.0 && sigma2.is_finite(),
        "bernstein.sigma2",
        format!("must be > 0, got {sigma2}"),
    )?;
    Ok((-(n as f64) * epsilon * epsilon / (8.0 * sigma2 + c * epsilon) + 0.25).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub thm1: f64,
    pub cor1_n: u64,
    pub cor1: f64,
    pub thm2: f64,
    pub cor2: f64,
    /// `None` when `delta > e^{-3/4}`.
    pub remark: Option<f64>,
}

impl BoundReport {
    pub fn evaluate(inp: &BoundInputs) -> Result<Self> {
        let remark = if inp.delta <= remark_delta_max() {
            Some(remark_rhs(inp)?)
        } else {
            None
        };
        Ok(Self {
            thm1: thm1_rhs(inp)?,
            cor1_n: cor1_batch(inp)?,
            cor1: cor1_rhs(inp)?,
            thm2: thm2_rhs(inp)?,
            cor2: cor2_rhs(inp)?,
            remark,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
    }

    fn base() -> BoundInputs {
        BoundInputs::constant_step(1.0, 1.0, 1.0, 2.0, 8, 1, 0.1, 0.25)
    }

    #[test]
    fn thm1_examples() {
        assert!(rel_close(thm1_rhs(&base()).unwrap(), 9.0));
        let mut inp = base();
        inp.n = 4;
        assert!(rel_close(thm1_rhs(&inp).unwrap(), 1.0 + 2.0));
        inp.n = u64::MAX;
        assert!((thm1_rhs(&inp).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cor1_examples() {
        let mut inp = BoundInputs::constant_step(1.0, 1.0, 1.0, 2.0, 100, 1, 0.1, 0.5);
        assert_eq!(cor1_batch(&inp).unwrap(), 100);
        assert!(rel_close(cor1_rhs(&inp).unwrap(), 0.09));
        inp.t = 4;
        inp.p = 1.5;
        assert_eq!(cor1_batch(&inp).unwrap(), 8);
        inp.sigma = 0.1;
        assert_eq!(cor1_batch(&inp).unwrap(), 1);
        inp.sigma = 1.0;
        inp.t = 5;
        // 5^1.5 = 11.18...
        assert_eq!(cor1_batch(&inp).unwrap(), 12);
        inp.delta1 = 0.0;
        assert!(cor1_batch(&inp).is_err());
    }

    #[test]
    fn thm2_examples() {
        let inp = BoundInputs::constant_step(0.0, 1.0, 1.0, 2.0, 1, 1, 1.0 / E, 0.5);
        assert!(rel_close(thm2_rhs(&inp).unwrap(), 61.25));
        let mut bigger = inp.clone();
        bigger.n = 2;
        assert!(thm2_rhs(&bigger).unwrap() < thm2_rhs(&inp).unwrap());
        let mut flat = inp;
        flat.p = 1.0 + 1e-12;
        assert!((thm2_rhs(&flat).unwrap() - 49.0).abs() < 1e-9);
    }

    #[test]
    fn cor2_and_remark_examples() {
        let inp = BoundInputs::constant_step(1.0, 1.0, 1.0, 2.0, 1, 1, 1.0 / E, 0.5);
        assert!(rel_close(cor2_rhs(&inp).unwrap(), 52.0));
        assert!(rel_close(remark_rhs(&inp).unwrap(), 2704.0));
        // 2*1/0.5 + 49 * 1.25^2
        assert!(rel_close(remark_thm_rhs(&inp).unwrap(), 4.0 + 76.5625));
        let mut loose = inp;
        loose.delta = 0.9;
        let err = remark_rhs(&loose).unwrap_err().to_string();
        assert!(err.contains("bounds.delta"), "{err}");
        assert!(remark_thm_rhs(&loose).is_err());
        loose.delta = remark_delta_max();
        assert!(remark_rhs(&loose).is_ok());
    }

    #[test]
    fn bernstein_examples() {
        assert!(rel_close(
            bernstein_tail(8, 1.0, 1e-300, 1.0).unwrap(),
            (-0.75f64).exp()
        ));
        assert!((bernstein_tail(8, 1.0, 1e-300, 1.0).unwrap() - 0.472).abs() < 1e-3);
        assert!((bernstein_tail(8, 1e-9, 1.0, 1.0).unwrap() - 0.25f64.exp()).abs() < 1e-12);
        assert!(
            bernstein_tail(16, 1.0, 1.0, 1.0).unwrap() < bernstein_tail(8, 1.0, 1.0, 1.0).unwrap()
        );
        assert!(bernstein_tail(0, 1.0, 1.0, 1.0).is_err());
        assert!(bernstein_tail(8, 0.0, 1.0, 1.0).is_err());
        assert!(bernstein_tail(8, 1.0, 0.0, 1.0).is_err());
        assert!(bernstein_tail(8, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn range_violations() {
        type Mutation = Box<dyn Fn(&mut BoundInputs)>;
        let cases: Vec<(&str, Mutation)> = vec![
            ("bounds.p", Box::new(|i| i.p = 1.0)),
            ("bounds.p", Box::new(|i| i.p = 2.5)),
            ("bounds.delta", Box::new(|i| i.delta = 1.0)),
            ("bounds.delta", Box::new(|i| i.delta = 0.0)),
            ("bounds.sigma", Box::new(|i| i.sigma = 0.0)),
            ("bounds.L", Box::new(|i| i.l = 0.0)),
            ("bounds.delta1", Box::new(|i| i.delta1 = -1.0)),
            ("bounds.n", Box::new(|i| i.n = 0)),
            ("bounds.eta", Box::new(|i| i.eta[0] = 1.0)),
            ("bounds.eta", Box::new(|i| i.eta.pop().map(|_| ()).unwrap())),
        ];
        for (key, mutate) in cases {
            let mut inp = base();
            mutate(&mut inp);
            let err = thm1_rhs(&inp).unwrap_err().to_string();
            assert!(err.contains(key), "{key}: {err}");
        }
    }

    #[test]
    fn report_omits_remark_for_large_delta() {
        let mut inp = base();
        inp.delta = 0.9;
        let rep = BoundReport::evaluate(&inp).unwrap();
        assert!(rep.remark.is_none());
        inp.delta = 0.01;
        assert!(BoundReport::evaluate(&inp).unwrap().remark.is_some());
        let json = serde_json::to_value(BoundReport::evaluate(&inp).unwrap()).unwrap();
        for key in ["thm1", "cor1_n", "cor1", "thm2", "cor2", "remark"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn thm1_dominates_monte_carlo_average() {
        use crate::estimators::{EstimatorConfig, EstimatorMode};
        use crate::experiments::lemmas::lemma_noise;
        use crate::noise::NoiseModel;
        use crate::optimizers::{run, OptimizerConfig};
        use crate::problems::Quadratic;
        use crate::rng::SeedSpec;
        use crate::vector::Vector;

        for p in [1.3, 1.6, 2.0] {
            let (noise, sigma) = lemma_noise(p).unwrap();
            let prob = Quadratic::new(NoiseModel::pareto(noise.tail_index(), 1.0, 1).unwrap());
            let est = EstimatorConfig::new(EstimatorMode::PsClipIncreasing, 4)
                .with_alpha(sigma)
                .with_beta(p);
            let opt = OptimizerConfig::constant(0.5, 50, est).with_theorem_mode(true);
            let x1 = Vector::from([1.0]);
            let runs = 500;
            let mut lhs = 0.0;
            for r in 0..runs {
                let tr = run(&prob, &opt, SeedSpec::new(21, r), &x1).unwrap();
                let weighted: f64 = tr
                    .records
                    .iter()
                    .map(|rec| rec.eta * rec.true_grad_norm.powi(2))
                    .sum();
                lhs += weighted / (0.5 * 50.0);
            }
            lhs /= runs as f64;
            let inp = BoundInputs::constant_step(0.5, 1.0, sigma, p, 50, 4, 0.1, 0.5);
            let rhs = thm1_rhs(&inp).unwrap();
            assert!(lhs <= rhs, "p={p}: {lhs} > {rhs}");
        }
    }

    fn random_inputs(rng: &mut ChaCha8Rng) -> BoundInputs {
        let t = rng.random_range(1..200u64);
        BoundInputs::constant_step(
            rng.random_range(0.1..10.0),
            rng.random_range(0.1..10.0),
            rng.random_range(0.1..10.0),
            rng.random_range(1.05..2.0),
            t,
            rng.random_range(1..500u64),
            rng.random_range(1e-6..0.4),
            0.0,
        )
    }

    #[test]
    fn randomized_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut inp = random_inputs(&mut rng);
            let eta = 0.5 / inp.l;
            inp.eta = vec![eta; inp.t as usize];
            let t1 = thm1_rhs(&inp).unwrap();
            let t2 = thm2_rhs(&inp).unwrap();
            let c2 = cor2_rhs(&inp).unwrap();
            let r = remark_rhs(&inp).unwrap();

            let mut more_n = inp.clone();
            more_n.n += 1;
            assert!(thm1_rhs(&more_n).unwrap() < t1);
            assert!(thm2_rhs(&more_n).unwrap() < t2);

            let mut more_sigma = inp.clone();
            more_sigma.sigma *= 1.1;
            assert!(thm1_rhs(&more_sigma).unwrap() > t1);
            assert!(thm2_rhs(&more_sigma).unwrap() > t2);
            if let (Ok(hi), Ok(lo)) = (cor1_batch(&more_sigma), cor1_batch(&inp)) {
                assert!(hi >= lo);
            }

            let mut more_gap = inp.clone();
            more_gap.delta1 *= 1.1;
            assert!(thm1_rhs(&more_gap).unwrap() > t1);
            assert!(cor2_rhs(&more_gap).unwrap() > c2);
            assert!(cor1_rhs(&more_gap).unwrap() > cor1_rhs(&inp).unwrap());

            let mut tighter = inp.clone();
            tighter.delta *= 0.5;
            assert!(thm2_rhs(&tighter).unwrap() > t2);
            assert!(cor2_rhs(&tighter).unwrap() > c2);
            assert!(remark_rhs(&tighter).unwrap() > r);

            let mut smaller_steps = inp.clone();
            smaller_steps.eta = vec![eta * 0.5; inp.t as usize];
            assert!(thm1_rhs(&smaller_steps).unwrap() > t1);

            let n = rng.random_range(1..1000u64);
            let (eps, c, s2) = (
                rng.random_range(0.01..5.0),
                rng.random_range(0.01..5.0),
                rng.random_range(0.01..5.0),
            );
            let b = bernstein_tail(n, eps, c, s2).unwrap();
            assert!(bernstein_tail(n + 1, eps, c, s2).unwrap() < b || b == 0.0);
            assert!(bernstein_tail(n, eps * 1.1, c, s2).unwrap() <= b);
            assert!(bernstein_tail(n, eps, c * 1.1, s2).unwrap() >= b);
            assert!(bernstein_tail(n, eps, c, s2 * 1.1).unwrap() >= b);
        }
    }
}
