//! Stochastic objectives `F(x) = E[f(x, xi)]` with exact gradient access for
//! measurement.
//!
//! The optimizer only ever sees [`StochasticProblem::stochastic_gradient_into`];
//! `full_gradient`, `value` and `init_gap` exist for traces and checks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::noise::NoiseModel;
use crate::rng::Stream;
use crate::vector::Vector;

pub trait StochasticProblem: Send + Sync {
    fn dim(&self) -> usize;

    /// Lipschitz constant `L` of the full gradient.
    fn smoothness(&self) -> f64;

    /// `F* <= inf F`.
    fn lower_bound(&self) -> f64;

    fn noise(&self) -> &NoiseModel;

    fn value(&self, x: &Vector) -> Result<f64>;

    fn full_gradient(&self, x: &Vector) -> Result<Vector>;

    /// `grad f(x, xi)` for a given noise realisation.
    fn gradient_with_noise(&self, x: &Vector, xi: &Vector) -> Result<Vector>;

    /// Writes `grad f(x, xi)` with fresh `xi ~ noise` into `out`.
    fn stochastic_gradient_into(
        &self,
        x: &Vector,
        rng: &mut Stream,
        out: &mut Vector,
    ) -> Result<()>;

    fn stochastic_gradient(&self, x: &Vector, rng: &mut Stream) -> Result<Vector> {
        let mut out = Vector::zeros(self.dim());
        self.stochastic_gradient_into(x, rng, &mut out)?;
        Ok(out)
    }

    /// `Delta_1 = F(x_1) - F*`.
    fn init_gap(&self, x1: &Vector) -> Result<f64> {
        Ok(self.value(x1)? - self.lower_bound())
    }
}

/// `f(x, xi) = |x|^2 / 2 + <x, xi>`, so `grad f(x, xi) = x + xi`,
/// `F(x) = |x|^2 / 2`, `grad F(x) = x`, `F* = 0`, `L = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    noise: NoiseModel,
}

impl Quadratic {
    /// The problem dimension is the noise dimension.
    pub fn new(noise: NoiseModel) -> Self {
        Self { noise }
    }
}

impl StochasticProblem for Quadratic {
    fn dim(&self) -> usize {
        self.noise.dim()
    }

    fn smoothness(&self) -> f64 {
        1.0
    }

    fn lower_bound(&self) -> f64 {
        0.0
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        x.check_dim(self.dim())?;
        Ok(0.5 * x.norm_squared())
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        x.check_dim(self.dim())?;
        Ok(x.clone())
    }

    fn gradient_with_noise(&self, x: &Vector, xi: &Vector) -> Result<Vector> {
        x.check_dim(self.dim())?;
        x.add(xi)
    }

    fn stochastic_gradient_into(
        &self,
        x: &Vector,
        rng: &mut Stream,
        out: &mut Vector,
    ) -> Result<()> {
        x.check_dim(self.dim())?;
        out.check_dim(self.dim())?;
        let buf = out.as_mut_slice();
        self.noise.sample_into(rng, buf);
        for (o, xi) in buf.iter_mut().zip(x.as_slice()) {
            *o += xi;
        }
        Ok(())
    }
}

/// How the starting point `x_1` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// i.i.d. standard normal components.
    #[default]
    Normal,
    /// i.i.d. uniform components on `[-1, 1]`.
    Uniform,
    /// The all-ones vector.
    Ones,
}

impl InitScheme {
    pub const ALL: [InitScheme; 3] = [InitScheme::Normal, InitScheme::Uniform, InitScheme::Ones];

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Normal => "normal",
            InitScheme::Uniform => "uniform",
            InitScheme::Ones => "ones",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s)
    }

    pub fn draw(self, dim: usize, rng: &mut Stream) -> Vector {
        let mut x = Vector::zeros(dim);
        for v in x.as_mut_slice() {
            *v = match self {
                InitScheme::Normal => rng.sample(StandardNormal),
                InitScheme::Uniform => rng.random_range(-1.0..=1.0),
                InitScheme::Ones => 1.0,
            };
        }
        x
    }
}
