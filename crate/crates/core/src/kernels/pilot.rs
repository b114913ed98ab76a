use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use super::sampler::{Budget, DaSampler, SamplerConfig, Surrogate, TreeSurrogate};
use super::{AdaptationSchedule, Kernel, ProposalSpec, TargetModel};
use crate::error::{invalid, Result};
use crate::kdtree::{KdTree, TreeEntry};
use crate::linalg::mean_covariance;
use crate::surrogate::{SurrogateConfig, WhiteningTransform};

#[derive(Clone, Debug)]
pub struct PilotConfig {
    pub n_iters: u64,
    /// The pilot is split into this many rounds; each round after the first
    /// uses `lambda` times the covariance of the previous round's states.
    pub rounds: usize,
    pub lambda: f64,
    pub theta0: Vec<f64>,
    pub v0: DMatrix<f64>,
    pub half_bucket: usize,
    pub k: usize,
    pub tree_seed: u64,
    /// Proposals used to estimate the reference stage-one rate at `xi = 1`.
    pub n_probe: usize,
}

#[derive(Clone, Debug)]
pub struct PilotOutput {
    /// Chain states of the final round; the whitening is fitted to these.
    pub samples: Vec<Vec<f64>>,
    /// Finite expensive evaluations over the whole pilot, in order.
    pub evaluations: Vec<(Vec<f64>, f64)>,
    pub transform: WhiteningTransform,
    pub v_fixed: DMatrix<f64>,
    pub tree: KdTree,
    pub alpha1_ref: f64,
    pub final_theta: Vec<f64>,
    pub final_log_expensive: f64,
    pub acceptance_rate: f64,
}

/// Keeps every evaluation in raw coordinates; never answers cheap queries.
struct Recorder {
    stored: Vec<(Vec<f64>, f64)>,
}

impl Surrogate for Recorder {
    fn coordinates(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }
    fn log_cheap(&self, _: &[f64], _: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }
    fn absorb(&mut self, coords: Vec<f64>, log_value: f64) -> Result<()> {
        self.stored.push((coords, log_value));
        Ok(())
    }
    fn generation(&self) -> u64 {
        0
    }
}

/// Runs the fixed random-walk kernel, fits the whitening to the final
/// round, sets `V_fixed = lambda * Sigma_hat` and builds the initial tree
/// from every finite evaluation.
pub fn pilot_run<T: TargetModel>(target: &T, cfg: &PilotConfig, rng: &mut ChaCha8Rng) -> Result<PilotOutput> {
    let d = target.dim();
    if cfg.rounds == 0 {
        return Err(invalid("pilot needs at least one round"));
    }
    if cfg.n_iters <= 10 * d as u64 {
        return Err(invalid(format!(
            "pilot of {} iterations is too short for dimension {d}",
            cfg.n_iters
        )));
    }
    if !(cfg.lambda > 0.0) {
        return Err(invalid("lambda must be positive"));
    }
    let per_round = cfg.n_iters / cfg.rounds as u64;
    let mut v = cfg.v0.clone();
    let mut theta = cfg.theta0.clone();
    let mut log_value = None;
    let mut evaluations = Vec::new();
    let mut samples = Vec::new();
    let mut accepted = 0usize;
    let schedule = AdaptationSchedule::Harmonic { c: 0.0 };
    for round in 0..cfg.rounds {
        let iters = if round + 1 == cfg.rounds {
            cfg.n_iters - per_round * (cfg.rounds as u64 - 1)
        } else {
            per_round
        };
        let spec = ProposalSpec::new(v.clone(), 1.0)?;
        let recorder = Recorder { stored: Vec::new() };
        let mut chain = DaSampler::new(
            target,
            recorder,
            spec,
            SamplerConfig::new(1.0, schedule)?,
            theta.clone(),
            log_value,
            rng_fork(rng),
        )?;
        let trace = chain.run(Budget::Iterations(iters))?;
        theta = chain.state().theta.clone();
        log_value = Some(chain.state().log_expensive);
        evaluations.extend(chain.into_surrogate().stored);
        samples = trace.rows.iter().map(|r| r.theta.clone()).collect();
        accepted = trace.rows.iter().filter(|r| r.accepted).count();
        if round + 1 < cfg.rounds {
            match mean_covariance(&samples) {
                Ok((_, cov)) if crate::linalg::cholesky_jittered(&cov).is_some() && cov.trace() > 0.0 => {
                    v = cov * cfg.lambda;
                }
                _ => log::warn!("pilot round {round} did not move; keeping its proposal"),
            }
        }
    }
    let acceptance_rate = accepted as f64 / samples.len().max(1) as f64;
    let transform = WhiteningTransform::fit(&samples)?;
    let (_, cov) = mean_covariance(&samples)?;
    let v_fixed = if crate::linalg::cholesky_jittered(&cov).is_some() {
        cov * cfg.lambda
    } else {
        v
    };
    let entries: Vec<TreeEntry> = evaluations
        .iter()
        .map(|(t, l)| TreeEntry::new(transform.whiten(t), *l))
        .collect();
    let tree = KdTree::build_balanced(entries, d, cfg.half_bucket, cfg.tree_seed)?;
    let sur = TreeSurrogate::new(tree, transform, SurrogateConfig::new(cfg.k, 0.0)?, target.kind())?;
    let spec = ProposalSpec::new(v_fixed.clone(), 1.0)?;
    let alpha1_ref = probe_stage1_rate(target, &sur, &spec, &samples, cfg.n_probe, rng)?;
    let (tree, transform) = sur.into_parts();
    Ok(PilotOutput {
        samples,
        evaluations,
        transform,
        v_fixed,
        tree,
        alpha1_ref,
        final_theta: theta,
        final_log_expensive: log_value.unwrap_or(f64::NAN),
        acceptance_rate,
    })
}

fn rng_fork(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    use rand::{Rng, SeedableRng};
    ChaCha8Rng::seed_from_u64(rng.random())
}

/// Mean stage-one acceptance probability of delayed-acceptance proposals
/// (scale `spec.xi()`) made from states spread evenly through `states`.
pub fn probe_stage1_rate<T: TargetModel, S: Surrogate>(
    target: &T,
    surrogate: &S,
    spec: &ProposalSpec,
    states: &[Vec<f64>],
    n_probe: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if states.is_empty() || n_probe == 0 {
        return Err(invalid("stage-one probe needs states and a positive probe count"));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for j in 0..n_probe {
        let theta = &states[j * states.len() / n_probe];
        let Some(cur) = surrogate.log_cheap(theta, &surrogate.coordinates(theta))? else {
            return Err(invalid("surrogate cannot answer during the stage-one probe"));
        };
        let prop = spec.propose(theta, Kernel::DelayedAcceptance, rng);
        let a = super::stage1_accept_prob_with_prior(
            target.log_prior(&prop),
            cur,
            || {
                surrogate
                    .log_cheap(&prop, &surrogate.coordinates(&prop))
                    .map(|v| v.unwrap_or(f64::NEG_INFINITY))
            },
            0.0,
        )?;
        total += a;
        used += 1;
    }
    Ok(total / used as f64)
}
