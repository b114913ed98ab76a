use std::fmt::Write as _;
use std::io::BufRead;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::kdtree::TreeStats;
use crate::kernels::{Branch, Trace};

pub const MIN_ESS_LENGTH: usize = 100;

/// Autocovariances `gamma_0..gamma_{n-1}` (divisor `n`) via a zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let scale = 1.0 / (m as f64 * n as f64);
    buf[..n].iter().map(|c| c.re * scale).collect()
}

/// Effective sample size with Geyer's initial positive sequence estimator.
/// Errors on chains shorter than 100; a constant chain gives 0.
pub fn ess(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < MIN_ESS_LENGTH {
        return Err(invalid(format!("chain of length {n} is too short for ESS (need {MIN_ESS_LENGTH})")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chain contains non-finite values".into()));
    }
    let gamma = autocovariance(x);
    if !(gamma[0] > 0.0) {
        log::warn!("constant chain; ESS is zero");
        return Ok(0.0);
    }
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (gamma[2 * m] + gamma[2 * m + 1]) / gamma[0];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    Ok(n as f64 / tau)
}

/// Standard error of the mean from `batches` non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || x.len() < 2 * batches {
        return Err(invalid(format!("cannot form {batches} batches from {} values", x.len())));
    }
    let size = x.len() / batches;
    let means: Vec<f64> = x
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value for two samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS test needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok((d, kolmogorov_q(lambda)))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Summary of a chain, computed from its trace alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub iterations: u64,
    pub expensive_evaluations: u64,
    pub acceptance_rate: f64,
    /// Share of delayed-acceptance proposals that passed the surrogate screen.
    pub alpha1: Option<f64>,
    /// Share of screened-in delayed-acceptance proposals that were accepted.
    pub alpha2: Option<f64>,
    pub ess: Vec<f64>,
    pub min_ess: f64,
    pub means: Vec<f64>,
}

impl Diagnostics {
    pub fn min_ess_per_expensive(&self) -> f64 {
        if self.expensive_evaluations == 0 {
            0.0
        } else {
            self.min_ess / self.expensive_evaluations as f64
        }
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x}"));
        writeln!(s, "iterations = {}", self.iterations).ok();
        writeln!(s, "expensive_evaluations = {}", self.expensive_evaluations).ok();
        writeln!(s, "acceptance_rate = {}", self.acceptance_rate).ok();
        writeln!(s, "alpha1 = {}", opt(self.alpha1)).ok();
        writeln!(s, "alpha2 = {}", opt(self.alpha2)).ok();
        writeln!(s, "min_ess = {}", self.min_ess).ok();
        writeln!(s, "min_ess_per_expensive = {}", self.min_ess_per_expensive()).ok();
        for (j, (e, m)) in self.ess.iter().zip(&self.means).enumerate() {
            writeln!(s, "ess_{} = {e}", j + 1).ok();
            writeln!(s, "mean_{} = {m}", j + 1).ok();
        }
        s
    }
}

/// Diagnostics of a trace, discarding the first `burn` rows.
pub fn summarize(trace: &Trace, burn: usize) -> Result<Diagnostics> {
    if burn >= trace.len() {
        return Err(invalid(format!("burn-in {burn} leaves nothing of {} rows", trace.len())));
    }
    let rows = &trace.rows[burn..];
    let n = rows.len() as f64;
    let da: Vec<_> = rows.iter().filter(|r| r.branch == Branch::DelayedAcceptance).collect();
    let da_screened = da.iter().filter(|r| r.stage == 2).count();
    let da_accepted = da.iter().filter(|r| r.accepted).count();
    let alpha1 = (!da.is_empty()).then(|| da_screened as f64 / da.len() as f64);
    let alpha2 = (da_screened > 0).then(|| da_accepted as f64 / da_screened as f64);
    let mut ess_v = Vec::with_capacity(trace.dim);
    let mut means = Vec::with_capacity(trace.dim);
    for j in 0..trace.dim {
        let col: Vec<f64> = rows.iter().map(|r| r.theta[j]).collect();
        means.push(col.iter().sum::<f64>() / n);
        ess_v.push(ess(&col)?);
    }
    Ok(Diagnostics {
        iterations: rows.len() as u64,
        expensive_evaluations: rows.iter().filter(|r| r.stage == 2).count() as u64,
        acceptance_rate: rows.iter().filter(|r| r.accepted).count() as f64 / n,
        alpha1,
        alpha2,
        min_ess: ess_v.iter().copied().fold(f64::INFINITY, f64::min),
        ess: ess_v,
        means,
    })
}

/// Reads a trace CSV and summarizes it.
pub fn diagnose_trace<R: BufRead>(input: R, burn: usize) -> Result<Diagnostics> {
    summarize(&Trace::read_csv(input)?, burn)
}

pub fn tree_stats_key_values(stats: &TreeStats) -> String {
    format!(
        "tree_entries = {}\ntree_leaves = {}\ntree_mean_leaf_depth = {}\ntree_min_leaf_depth = {}\ntree_max_leaf_depth = {}\ntree_depth_99_lo = {}\ntree_depth_99_hi = {}\n",
        stats.entry_count,
        stats.leaf_count,
        stats.mean_leaf_depth,
        stats.min_leaf_depth,
        stats.max_leaf_depth,
        stats.central_99_depth.0,
        stats.central_99_depth.1
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x = ar1(300, 0.6, 1);
        let g = autocovariance(&x);
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        for lag in [0, 1, 5, 77] {
            let direct: f64 = (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum::<f64>() / n as f64;
            assert!((g[lag] - direct).abs() < 1e-10, "{lag}");
        }
    }

    #[test]
    fn ess_of_ar1_matches_theory() {
        // IACT of AR(1) is (1 + phi) / (1 - phi).
        let phi = 0.8;
        let n = 200_000;
        let e = ess(&ar1(n, phi, 2)).unwrap();
        let expect = n as f64 * (1.0 - phi) / (1.0 + phi);
        assert!((e / expect - 1.0).abs() < 0.1, "{e} vs {expect}");
        let iid = ess(&ar1(50_000, 0.0, 3)).unwrap();
        assert!((iid / 50_000.0 - 1.0).abs() < 0.1, "{iid}");
    }

    #[test]
    fn ess_edge_cases() {
        assert!(ess(&[1.0; 99]).is_err());
        assert_eq!(ess(&[2.5; 100]).unwrap(), 0.0);
        let mut x = vec![0.0; 150];
        x[3] = f64::NAN;
        assert!(ess(&x).is_err());
    }

    #[test]
    fn batch_means_of_iid_draws() {
        let x = ar1(100_000, 0.0, 4);
        let se = batch_means_se(&x, 50).unwrap();
        let expect = 1.0 / (x.len() as f64).sqrt();
        assert!((se / expect - 1.0).abs() < 0.3, "{se}");
        assert!(batch_means_se(&x[..10], 10).is_err());
    }

    #[test]
    fn ks_detects_a_shift() {
        let a = ar1(2000, 0.0, 5);
        let b = ar1(3000, 0.0, 6);
        let (d, p) = ks_two_sample(&a, &b).unwrap();
        assert!(d < 0.06 && p > 0.01, "{d} {p}");
        let shifted: Vec<f64> = b.iter().map(|v| v + 0.3).collect();
        let (_, p) = ks_two_sample(&a, &shifted).unwrap();
        assert!(p < 1e-6);
        // Identical samples.
        assert_eq!(ks_two_sample(&a, &a).unwrap().0, 0.0);
        // Known value: Q(1) = 0.26999967...
        assert!((kolmogorov_q(1.0) - 0.269_999_671_677_355_3).abs() < 1e-12);
    }
}
