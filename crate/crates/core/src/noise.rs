//! Noise samplers for the stochastic gradient oracle.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::vector::Vector;

/// `S * scale * U^(-1/tail_index)` with `S` uniform on `{-1, +1}` and `U`
/// uniform on `(0, 1]`.
///
/// Moments of order `q < tail_index` are finite; the `tail_index`-th is not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizedPareto {
    tail_index: f64,
    scale: f64,
}

impl SymmetrizedPareto {
    pub fn new(tail_index: f64, scale: f64) -> Result<Self> {
        ensure(
            tail_index.is_finite() && tail_index > 1.0,
            "noise.p",
            format!("tail index must be > 1, got {tail_index}"),
        )?;
        ensure(
            scale.is_finite() && scale > 0.0,
            "noise.scale",
            format!("scale must be > 0, got {scale}"),
        )?;
        Ok(Self { tail_index, scale })
    }

    pub fn tail_index(&self) -> f64 {
        self.tail_index
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inverse CDF of the magnitude at `u` in `(0, 1]`.
    pub fn magnitude(&self, u: f64) -> f64 {
        self.scale * u.powf(-1.0 / self.tail_index)
    }

    /// `E|X|^q = scale^q * a / (a - q)` for `q < a`, `None` otherwise.
    pub fn abs_moment(&self, q: f64) -> Option<f64> {
        (q < self.tail_index).then(|| self.scale.powf(q) * self.tail_index / (self.tail_index - q))
    }

    /// One draw. The 53 high bits of a single 64-bit word give `U`, bit 0
    /// gives the sign; the two are disjoint and therefore independent.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let bits = rng.next_u64();
        let u = ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let m = self.magnitude(u);
        if bits & 1 == 0 {
            m
        } else {
            -m
        }
    }
}

/// Centred Gaussian with standard deviation `std_dev` per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    std_dev: f64,
}

impl GaussianNoise {
    pub fn new(std_dev: f64) -> Result<Self> {
        ensure(
            std_dev.is_finite() && std_dev > 0.0,
            "noise.std",
            format!("standard deviation must be > 0, got {std_dev}"),
        )?;
        Ok(Self { std_dev })
    }

    pub fn std_dev(&self) -> f64 {
        self.std_dev
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.std_dev * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    SymmetrizedPareto(SymmetrizedPareto),
    Gaussian(GaussianNoise),
    None,
}

/// A distribution over `R^dim` with i.i.d. components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    kind: NoiseKind,
    dim: usize,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, dim: usize) -> Result<Self> {
        ensure(dim >= 1, "problem.dim", "dimension must be >= 1")?;
        Ok(Self { kind, dim })
    }

    pub fn pareto(tail_index: f64, scale: f64, dim: usize) -> Result<Self> {
        Self::new(
            NoiseKind::SymmetrizedPareto(SymmetrizedPareto::new(tail_index, scale)?),
            dim,
        )
    }

    pub fn gaussian(std_dev: f64, dim: usize) -> Result<Self> {
        Self::new(NoiseKind::Gaussian(GaussianNoise::new(std_dev)?), dim)
    }

    pub fn none(dim: usize) -> Result<Self> {
        Self::new(NoiseKind::None, dim)
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vector {
        let mut out = Vector::zeros(self.dim);
        self.sample_into(rng, out.as_mut_slice());
        out
    }

    /// Overwrites `out` (length `dim`) with a fresh draw.
    pub fn sample_into<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            NoiseKind::SymmetrizedPareto(d) => out.iter_mut().for_each(|v| *v = d.sample(rng)),
            NoiseKind::Gaussian(d) => out.iter_mut().for_each(|v| *v = d.sample(rng)),
            NoiseKind::None => out.fill(0.0),
        }
    }
}

/// `(1/N) * sum_i |sample_i|^q`.
pub fn empirical_moment(samples: &[Vector], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    ensure(
        q.is_finite() && q > 0.0,
        "q",
        format!("moment order must be > 0, got {q}"),
    )?;
    let total: f64 = samples.iter().map(|s| s.norm().powf(q)).sum();
    Ok(total / samples.len() as f64)
}
