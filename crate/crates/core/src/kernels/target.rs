use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_jittered, gaussian_log_density};

/// Whether the expensive density is exact or an unbiased random estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Exact,
    Stochastic,
}

/// The expensive posterior the samplers run against.
pub trait TargetModel {
    fn dim(&self) -> usize;

    fn kind(&self) -> TargetKind;

    /// Log prior density; `-inf` outside the support. Must be cheap.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Log posterior (up to a constant), or the log of a non-negative
    /// unbiased estimate of it for stochastic targets. Only called inside
    /// the prior support. `-inf` is a legitimate zero estimate.
    fn log_density(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64>;
}

impl<T: TargetModel + ?Sized> TargetModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> TargetKind {
        (**self).kind()
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        (**self).log_prior(theta)
    }
    fn log_density(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        (**self).log_density(theta, rng)
    }
}

impl<T: TargetModel + ?Sized> TargetModel for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> TargetKind {
        (**self).kind()
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        (**self).log_prior(theta)
    }
    fn log_density(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        (**self).log_density(theta, rng)
    }
}

/// Multivariate normal posterior with a flat improper prior; the test
/// target with known moments.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        if cholesky_jittered(&cov).is_none() {
            return Err(Error::SingularCovariance("target covariance".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        gaussian_log_density(&DVector::from_column_slice(theta), &self.mean, &self.cov)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn kind(&self) -> TargetKind {
        TargetKind::Exact
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if theta.iter().all(|t| t.is_finite()) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_density(&self, theta: &[f64], _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.log_pdf(theta))
    }
}

/// A Gaussian posterior observed through multiplicative log-normal noise
/// `W` with `E[W] = 1`, i.e. an unbiased but noisy estimator.
#[derive(Clone, Debug)]
pub struct NoisyGaussianTarget {
    inner: GaussianTarget,
    log_sd: f64,
}

impl NoisyGaussianTarget {
    pub fn new(inner: GaussianTarget, log_sd: f64) -> Result<Self> {
        if !(log_sd >= 0.0) || !log_sd.is_finite() {
            return Err(invalid(format!("noise sd must be finite and >= 0, got {log_sd}")));
        }
        Ok(Self { inner, log_sd })
    }

    pub fn inner(&self) -> &GaussianTarget {
        &self.inner
    }
}

impl TargetModel for NoisyGaussianTarget {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> TargetKind {
        TargetKind::Stochastic
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.inner.log_prior(theta)
    }

    fn log_density(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        let z: f64 = rng.sample(StandardNormal);
        let s = self.log_sd;
        Ok(self.inner.log_pdf(theta) + s * z - 0.5 * s * s)
    }
}
