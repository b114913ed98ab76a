//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Sample mean and unbiased (n - 1) sample covariance of row vectors.
pub fn mean_covariance(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(crate::error::invalid("need at least two samples for a covariance"));
    }
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Cholesky factorization, retrying once with a diagonal jitter of
/// `1e-10 * trace` when the matrix is numerically indefinite.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let mut a = m.clone();
    symmetrize(&mut a);
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let jitter = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE);
    for i in 0..a.nrows() {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a)
}

/// Log density of `N(mean, cov)` at `x`; `None` if `cov` is not positive
/// definite even after jitter.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cholesky_jittered(cov)?;
    let r = x - mean;
    let z = chol.l().solve_lower_triangular(&r)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let d = x.len() as f64;
    Some(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared()))
}
