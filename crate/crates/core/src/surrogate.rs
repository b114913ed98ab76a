//! The cheap posterior: a whitening map fitted once on pilot output, an
//! inverse-distance-weighted k-nearest-neighbour average of stored
//! posterior values, and calibration of the merge radius.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::kdtree::KdTree;
use crate::linalg::{mean_covariance, symmetrize};
use crate::special::{chi2_quantile, log_sum_exp};

/// Affine map `psi = S^{-1/2} (theta - mu)` fixed after the pilot run.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform {
    mean: DVector<f64>,
    inv_sqrt: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            inv_sqrt: DMatrix::identity(dim, dim),
            sqrt: DMatrix::identity(dim, dim),
        }
    }

    /// Fits the sample mean and the inverse symmetric square root of the
    /// sample covariance. A numerically singular covariance gets a ridge of
    /// `1e-8 * trace / d` on its diagonal, with a warning.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let d = samples.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(invalid("whitening needs non-empty samples"));
        }
        if samples.len() <= d {
            return Err(Error::SingularCovariance(format!(
                "{} samples cannot determine a {d}x{d} covariance; run a longer pilot",
                samples.len()
            )));
        }
        let (mean, mut cov) = mean_covariance(samples)?;
        let trace = cov.trace();
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::SingularCovariance(
                "pilot samples do not move; run a longer pilot".into(),
            ));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 1e-12 * max {
            let ridge = 1e-8 * trace / d as f64;
            log::warn!(
                "pilot covariance is numerically singular (eigenvalues {min:e}..{max:e}); \
                 adding ridge {ridge:e}"
            );
            for i in 0..d {
                cov[(i, i)] += ridge;
            }
        }
        Self::from_covariance(mean, cov)
    }

    fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(cov);
        if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::SingularCovariance(
                "covariance is not positive definite; run a longer pilot".into(),
            ));
        }
        let q = &eig.eigenvectors;
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let inv_root = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let mut sqrt = q * root * q.transpose();
        let mut inv_sqrt = q * inv_root * q.transpose();
        symmetrize(&mut sqrt);
        symmetrize(&mut inv_sqrt);
        Ok(Self {
            mean,
            inv_sqrt,
            sqrt,
        })
    }

    /// Rebuilds a transform from its serialized mean and inverse square root.
    pub fn from_parts(mean: Vec<f64>, inv_sqrt: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if inv_sqrt.nrows() != d || inv_sqrt.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: inv_sqrt.nrows(),
            });
        }
        let asym = (&inv_sqrt - inv_sqrt.transpose()).abs().max();
        if asym > 1e-12 * inv_sqrt.abs().max() {
            return Err(invalid("whitening matrix must be symmetric"));
        }
        let sqrt = inv_sqrt
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularCovariance("whitening matrix is singular".into()))?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            inv_sqrt,
            sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn whiten(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim());
        let centred = DVector::from_column_slice(theta) - &self.mean;
        (&self.inv_sqrt * centred).data.into()
    }

    pub fn unwhiten(&self, psi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(psi.len(), self.dim());
        (&self.sqrt * DVector::from_column_slice(psi) + &self.mean).data.into()
    }

    /// CSV: the mean on the first row, then the rows of the inverse square
    /// root. Floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let row = |xs: &mut dyn Iterator<Item = f64>| {
            xs.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
        };
        writeln!(out, "{}", row(&mut self.mean.iter().copied()))?;
        for r in 0..self.dim() {
            writeln!(out, "{}", row(&mut self.inv_sqrt.row(r).iter().copied()))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 || rows.len() != d + 1 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Parse("whitening CSV must hold a mean row and a d x d matrix".into()));
        }
        let mean = rows[0].clone();
        let flat: Vec<f64> = rows[1..].iter().flatten().copied().collect();
        Self::from_parts(mean, DMatrix::from_row_slice(d, d, &flat))
    }
}

/// Fits a [`WhiteningTransform`] to raw pilot samples.
pub fn fit_whitening(samples: &[Vec<f64>]) -> Result<WhiteningTransform> {
    WhiteningTransform::fit(samples)
}

/// Neighbour count, merge radius and weighting exponent of the surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateConfig {
    pub k: usize,
    pub epsilon: f64,
    /// Weights are `distance^-weight_exponent`.
    pub weight_exponent: f64,
}

impl SurrogateConfig {
    pub fn new(k: usize, epsilon: f64) -> Result<Self> {
        let cfg = Self {
            k,
            epsilon,
            weight_exponent: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("merge radius must be non-negative"));
        }
        if !(self.weight_exponent >= 0.0) {
            return Err(invalid("weight exponent must be non-negative"));
        }
        Ok(())
    }
}

/// Log of the inverse-distance-weighted mean, on the likelihood scale, of
/// the `k` nearest stored values. A neighbour at distance zero is returned
/// as is.
pub fn estimate_log_posterior(tree: &KdTree, psi: &[f64], k: usize) -> Result<f64> {
    estimate_log_posterior_weighted(tree, psi, k, 1.0)
}

pub fn estimate_log_posterior_weighted(
    tree: &KdTree,
    psi: &[f64],
    k: usize,
    weight_exponent: f64,
) -> Result<f64> {
    let nn = tree.knn(psi, k)?;
    if let Some(hit) = nn.iter().find(|n| n.distance == 0.0) {
        return Ok(hit.record.log_value);
    }
    let mut weighted = Vec::with_capacity(nn.len());
    let mut log_w = Vec::with_capacity(nn.len());
    for n in &nn {
        let lw = -weight_exponent * n.distance.ln();
        log_w.push(lw);
        weighted.push(lw + n.record.log_value);
    }
    Ok(log_sum_exp(&weighted) - log_sum_exp(&log_w))
}

/// Merge radius giving an expected `e_target` stored points inside a fresh
/// point's ball when the tree holds `n` whitened Gaussian points:
/// `sqrt(2 q(e_target / n))` with `q` the chi-squared(d) quantile.
pub fn merge_radius(n: f64, dim: usize, e_target: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(invalid(format!("expected tree size must be at least 1, got {n}")));
    }
    if !(e_target > 0.0 && e_target < n) {
        return Err(invalid(format!("need 0 < e_target < n, got {e_target}")));
    }
    Ok((2.0 * chi2_quantile(dim, e_target / n)?).sqrt())
}

/// Bounds `(1 - e, exp(-e))` on the probability that a new point is kept
/// rather than merged, given an expected `e` neighbours within the radius.
/// The lower bound always holds. The upper one assumes the clouds are not
/// positively associated; for iid Gaussian clouds with `e = 0.5` the true
/// value is about 0.6435, above `exp(-0.5)`.
pub fn p_keep_bounds(e: f64) -> Result<(f64, f64)> {
    if !(e > 0.0 && e < 1.0) {
        return Err(invalid(format!("bounds are vacuous unless 0 < e < 1, got {e}")));
    }
    Ok((1.0 - e, (-e).exp()))
}
