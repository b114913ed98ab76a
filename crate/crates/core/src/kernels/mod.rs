//! Metropolis-Hastings and delayed-acceptance kernels, the adaptive mixture
//! driver, and tuning helpers.

mod pilot;
mod sampler;
mod target;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::cholesky_jittered;

pub use pilot::{pilot_run, probe_stage1_rate, PilotConfig, PilotOutput};
pub use sampler::{
    Branch, Budget, ChainState, DaSampler, OracleSurrogate, SamplerConfig, Surrogate, Trace,
    TraceRow, TreeSurrogate,
};
pub use target::{GaussianTarget, NoisyGaussianTarget, TargetKind, TargetModel};

/// Scale factor `2.38^2 / d` for random-walk proposals with exact densities.
pub fn lambda_exact(dim: usize) -> f64 {
    2.38 * 2.38 / dim as f64
}

/// Scale factor used for the pseudo-marginal Lotka-Volterra runs.
pub fn lambda_lotka_volterra() -> f64 {
    1.1 * 2.56 * 2.56 / 5.0
}

/// Which of the two mixture components proposed the move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Fixed,
    DelayedAcceptance,
}

/// Random-walk proposal `N(theta, V)` for the fixed kernel and
/// `N(theta, xi^2 V)` for the delayed-acceptance kernel.
#[derive(Clone, Debug)]
pub struct ProposalSpec {
    v: DMatrix<f64>,
    chol: DMatrix<f64>,
    xi: f64,
}

impl ProposalSpec {
    pub fn new(v: DMatrix<f64>, xi: f64) -> Result<Self> {
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(invalid(format!("xi must be positive, got {xi}")));
        }
        if v.nrows() != v.ncols() || v.nrows() == 0 {
            return Err(invalid("proposal covariance must be square and non-empty"));
        }
        let chol = cholesky_jittered(&v)
            .ok_or_else(|| Error::SingularCovariance("proposal covariance is not positive definite".into()))?
            .l();
        Ok(Self { v, chol, xi })
    }

    pub fn identity(dim: usize, xi: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim), xi)
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        Self::new(self.v.clone(), xi)
    }

    pub fn propose<R: Rng + ?Sized>(&self, theta: &[f64], which: Kernel, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &self.chol * z;
        let scale = match which {
            Kernel::Fixed => 1.0,
            Kernel::DelayedAcceptance => self.xi,
        };
        theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect()
    }
}

fn capped(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// `1 ^ pi(theta*) q(theta | theta*) / (pi(theta) q(theta* | theta))` from
/// log values. A zero-density proposal gives 0; a zero-density current
/// state is an error.
pub fn mh_accept_prob(
    log_pi_cur: f64,
    log_pi_prop: f64,
    log_q_rev: f64,
    log_q_fwd: f64,
) -> Result<f64> {
    if log_pi_cur.is_nan() || log_pi_prop.is_nan() || log_q_rev.is_nan() || log_q_fwd.is_nan() {
        return Err(Error::NonFinite("NaN in acceptance ratio".into()));
    }
    if log_pi_cur == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport);
    }
    if log_pi_prop == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok(capped(log_pi_prop - log_pi_cur + log_q_rev - log_q_fwd))
}

/// Stage-one probability: the MH formula with the surrogate in place of the
/// posterior. `log_q_ratio` is `log q(theta | theta*) - log q(theta* | theta)`.
pub fn stage1_accept_prob(log_cheap_cur: f64, log_cheap_prop: f64, log_q_ratio: f64) -> Result<f64> {
    mh_accept_prob(log_cheap_cur, log_cheap_prop, log_q_ratio, 0.0)
}

/// Stage-one probability with the prior checked first; a proposal outside
/// the support is rejected without consulting the surrogate.
pub fn stage1_accept_prob_with_prior(
    log_prior_prop: f64,
    log_cheap_cur: f64,
    cheap_prop: impl FnOnce() -> Result<f64>,
    log_q_ratio: f64,
) -> Result<f64> {
    if log_prior_prop == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    stage1_accept_prob(log_cheap_cur, cheap_prop()?, log_q_ratio)
}

/// Stage-two probability `1 ^ pi(theta*) pc(theta) / (pi(theta) pc(theta*))`.
pub fn stage2_accept_prob(
    log_pi_cur: f64,
    log_pi_prop: f64,
    log_cheap_cur: f64,
    log_cheap_prop: f64,
) -> Result<f64> {
    for (name, v) in [
        ("current density", log_pi_cur),
        ("proposed density", log_pi_prop),
        ("current surrogate", log_cheap_cur),
        ("proposed surrogate", log_cheap_prop),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} is {v}")));
        }
    }
    Ok(capped((log_pi_prop - log_pi_cur) - (log_cheap_prop - log_cheap_cur)))
}

/// Pseudo-marginal MH probability. The estimate at the current state is the
/// stored one; a zero estimate at the proposal gives 0.
pub fn psm_accept_prob(
    log_est_cur: f64,
    log_est_prop: f64,
    log_q_rev: f64,
    log_q_fwd: f64,
) -> Result<f64> {
    mh_accept_prob(log_est_cur, log_est_prop, log_q_rev, log_q_fwd)
}

/// Pseudo-marginal stage-two probability; a zero estimate at the proposal
/// gives 0.
pub fn stage2_psm_accept_prob(
    log_est_cur: f64,
    log_est_prop: f64,
    log_cheap_cur: f64,
    log_cheap_prop: f64,
) -> Result<f64> {
    if log_est_prop == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    stage2_accept_prob(log_est_cur, log_est_prop, log_cheap_cur, log_cheap_prop)
}

/// `p_i = 1 / (1 + c i)`. An infinite `c` never adapts.
pub fn adaptation_prob(i: u64, c: f64) -> f64 {
    if c.is_infinite() {
        return 0.0;
    }
    1.0 / (1.0 + c * i as f64)
}

/// When pending evaluations are moved into the tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdaptationSchedule {
    /// Flush with probability `1 / (1 + c i)` after the `i`-th evaluation.
    Harmonic { c: f64 },
    /// Flush after every even-numbered evaluation.
    Alternating,
}

impl AdaptationSchedule {
    pub fn harmonic(c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(invalid(format!("adaptation constant must be >= 0, got {c}")));
        }
        Ok(Self::Harmonic { c })
    }

    pub fn prob(&self, i: u64) -> f64 {
        match *self {
            Self::Harmonic { c } => adaptation_prob(i, c),
            Self::Alternating => {
                if i % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// The constant `c` as a display string; `inf` for no adaptation.
    pub fn describe(&self) -> String {
        match *self {
            Self::Harmonic { c } if c.is_infinite() => "inf".into(),
            Self::Harmonic { c } => format!("{c}"),
            Self::Alternating => "alternating".into(),
        }
    }
}

/// Rescales the fixed-kernel probability in proportion to the stage-one
/// acceptance rate: `beta_ref * alpha1_new / alpha1_ref`, clamped into (0, 1).
pub fn choose_beta(alpha1_ref: f64, beta_ref: f64, alpha1_new: f64) -> Result<f64> {
    if !(alpha1_ref > 0.0 && alpha1_ref <= 1.0) {
        return Err(invalid(format!("reference stage-one rate must be in (0, 1], got {alpha1_ref}")));
    }
    if !(alpha1_new > 0.0 && alpha1_new <= 1.0) {
        return Err(invalid(format!("stage-one rate must be in (0, 1], got {alpha1_new}")));
    }
    if !(beta_ref > 0.0 && beta_ref < 1.0) {
        return Err(invalid(format!("reference beta must be in (0, 1), got {beta_ref}")));
    }
    let beta = beta_ref * alpha1_new / alpha1_ref;
    Ok(beta.clamp(1e-6, 1.0 - 1e-6))
}
