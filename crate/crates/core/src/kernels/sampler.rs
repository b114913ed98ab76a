use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AdaptationSchedule, Kernel, ProposalSpec, TargetKind, TargetModel};
use crate::error::{invalid, Error, Result};
use crate::kdtree::{KdTree, KeepExisting, PseudoMarginalMerge, TreeEntry};
use crate::surrogate::{estimate_log_posterior_weighted, SurrogateConfig, WhiteningTransform};

pub type Branch = Kernel;

/// The cheap posterior seen by the delayed-acceptance kernel.
pub trait Surrogate {
    /// Coordinates under which evaluations are stored.
    fn coordinates(&self, theta: &[f64]) -> Vec<f64>;

    /// Cheap log posterior at a point, or `None` while the surrogate cannot
    /// answer yet.
    fn log_cheap(&self, theta: &[f64], coords: &[f64]) -> Result<Option<f64>>;

    /// Stores an expensive evaluation.
    fn absorb(&mut self, coords: Vec<f64>, log_value: f64) -> Result<()>;

    /// Changes whenever a stored value changes, so callers can cache.
    fn generation(&self) -> u64;
}

/// The k-nearest-neighbour surrogate over a KD-tree in whitened space.
#[derive(Clone, Debug)]
pub struct TreeSurrogate {
    tree: KdTree,
    transform: WhiteningTransform,
    config: SurrogateConfig,
    kind: TargetKind,
    generation: u64,
    merges: u64,
}

impl TreeSurrogate {
    pub fn new(
        tree: KdTree,
        transform: WhiteningTransform,
        config: SurrogateConfig,
        kind: TargetKind,
    ) -> Result<Self> {
        config.validate()?;
        if tree.dim() != transform.dim() {
            return Err(Error::DimensionMismatch {
                expected: transform.dim(),
                got: tree.dim(),
            });
        }
        if config.k > tree.half_bucket() {
            return Err(Error::KExceedsBucket {
                k: config.k,
                b: tree.half_bucket(),
            });
        }
        Ok(Self {
            tree,
            transform,
            config,
            kind,
            generation: 0,
            merges: 0,
        })
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn transform(&self) -> &WhiteningTransform {
        &self.transform
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn merges(&self) -> u64 {
        self.merges
    }

    pub fn into_parts(self) -> (KdTree, WhiteningTransform) {
        (self.tree, self.transform)
    }
}

impl Surrogate for TreeSurrogate {
    fn coordinates(&self, theta: &[f64]) -> Vec<f64> {
        self.transform.whiten(theta)
    }

    fn log_cheap(&self, _theta: &[f64], psi: &[f64]) -> Result<Option<f64>> {
        if self.tree.len() < self.config.k {
            return Ok(None);
        }
        estimate_log_posterior_weighted(&self.tree, psi, self.config.k, self.config.weight_exponent)
            .map(Some)
    }

    fn absorb(&mut self, psi: Vec<f64>, log_value: f64) -> Result<()> {
        let entry = TreeEntry::new(psi, log_value);
        let eps = self.config.epsilon;
        let merged = match self.kind {
            TargetKind::Exact => self.tree.insert_or_merge(entry, eps, &KeepExisting)?,
            TargetKind::Stochastic => self.tree.insert_or_merge(entry, eps, &PseudoMarginalMerge)?,
        };
        if merged {
            self.merges += 1;
            if self.kind == TargetKind::Exact {
                return Ok(());
            }
        }
        self.generation += 1;
        Ok(())
    }

    fn generation(&self) -> u64 {
        self.generation
    }
}

/// A fixed cheap density supplied as a closure of the raw parameter; used
/// to inject a known surrogate.
pub struct OracleSurrogate<F> {
    f: F,
}

impl<F: Fn(&[f64]) -> f64> OracleSurrogate<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(&[f64]) -> f64> Surrogate for OracleSurrogate<F> {
    fn coordinates(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn log_cheap(&self, theta: &[f64], _coords: &[f64]) -> Result<Option<f64>> {
        Ok(Some((self.f)(theta)))
    }

    fn absorb(&mut self, _coords: Vec<f64>, _log_value: f64) -> Result<()> {
        Ok(())
    }

    fn generation(&self) -> u64 {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Probability of taking the fixed kernel.
    pub beta: f64,
    pub schedule: AdaptationSchedule,
}

impl SamplerConfig {
    pub fn new(beta: f64, schedule: AdaptationSchedule) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid(format!("beta must be in (0, 1], got {beta}")));
        }
        Ok(Self { beta, schedule })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Iterations(u64),
    ExpensiveEvaluations(u64),
    WallClock(Duration),
}

/// The current point of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub log_expensive: f64,
    pub log_cheap: Option<f64>,
    /// Number of expensive evaluations so far.
    pub i: u64,
    cheap_generation: u64,
}

/// One iteration of the chain. `stage` is 0 when the proposal fell outside
/// the prior support, 1 when it stopped at the surrogate screen and 2 when
/// the expensive density was evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub branch: Branch,
    pub stage: u8,
    pub accepted: bool,
    pub i_n: u64,
    pub log_expensive: f64,
    pub log_cheap: Option<f64>,
    pub theta: Vec<f64>,
    /// Final-stage acceptance probability when one was computed.
    pub final_prob: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub dim: usize,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.theta[j]).collect()
    }

    pub fn expensive_evaluations(&self) -> u64 {
        self.rows.iter().filter(|r| r.stage == 2).count() as u64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let thetas: Vec<String> = (1..=self.dim).map(|j| format!("theta_{j}")).collect();
        writeln!(
            out,
            "iter,branch,stage,accepted,i_n,log_expensive,log_cheap,{}",
            thetas.join(",")
        )?;
        let mut line = String::new();
        for r in &self.rows {
            use std::fmt::Write as _;
            line.clear();
            let branch = match r.branch {
                Kernel::Fixed => "fixed",
                Kernel::DelayedAcceptance => "da",
            };
            let _ = write!(
                line,
                "{},{},{},{},{},{:?},",
                r.iter, branch, r.stage, r.accepted as u8, r.i_n, r.log_expensive
            );
            if let Some(c) = r.log_cheap {
                let _ = write!(line, "{c:?}");
            }
            for t in &r.theta {
                let _ = write!(line, ",{t:?}");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 8 || cols[0] != "iter" || cols[6] != "log_cheap" {
            return Err(Error::Parse("unrecognised trace header".into()));
        }
        let dim = cols.len() - 7;
        let mut trace = Trace::new(dim);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("trace line {}: {what}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad("wrong column count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad("bad integer"));
            let branch = match f[1] {
                "fixed" => Kernel::Fixed,
                "da" => Kernel::DelayedAcceptance,
                _ => return Err(bad("bad branch")),
            };
            trace.rows.push(TraceRow {
                iter: int(f[0])?,
                branch,
                stage: int(f[2])? as u8,
                accepted: int(f[3])? == 1,
                i_n: int(f[4])?,
                log_expensive: num(f[5])?,
                log_cheap: if f[6].is_empty() { None } else { Some(num(f[6])?) },
                theta: f[7..].iter().map(|s| num(s)).collect::<Result<_>>()?,
                final_prob: None,
            });
        }
        Ok(trace)
    }
}

/// The adaptive mixture of a fixed random-walk kernel and a
/// delayed-acceptance kernel. Exact and stochastic targets share this
/// driver; the estimate at the current state is carried and never
/// recomputed.
pub struct DaSampler<T, S> {
    target: T,
    surrogate: S,
    spec: ProposalSpec,
    config: SamplerConfig,
    state: ChainState,
    pending: Vec<(Vec<f64>, f64)>,
    rng: ChaCha8Rng,
    iter: u64,
    adaptations: u64,
    failures: u64,
}

impl<T: TargetModel, S: Surrogate> DaSampler<T, S> {
    /// Starts a chain at `theta0`. A known expensive value there (from the
    /// pilot) is reused; otherwise it is evaluated, without counting it.
    pub fn new(
        target: T,
        surrogate: S,
        spec: ProposalSpec,
        config: SamplerConfig,
        theta0: Vec<f64>,
        log_expensive0: Option<f64>,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        if theta0.len() != target.dim() || spec.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: theta0.len().min(spec.dim()),
            });
        }
        if target.log_prior(&theta0) == f64::NEG_INFINITY {
            return Err(Error::OutsideSupport);
        }
        let log_expensive = match log_expensive0 {
            Some(v) => v,
            None => target.log_density(&theta0, &mut rng)?,
        };
        if !log_expensive.is_finite() {
            return Err(Error::NonFinite(format!(
                "initial log density is {log_expensive}; start the chain elsewhere"
            )));
        }
        let psi = surrogate.coordinates(&theta0);
        Ok(Self {
            target,
            surrogate,
            spec,
            config,
            state: ChainState {
                theta: theta0,
                psi,
                log_expensive,
                log_cheap: None,
                i: 0,
                cheap_generation: u64::MAX,
            },
            pending: Vec::new(),
            rng,
            iter: 0,
            adaptations: 0,
            failures: 0,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn surrogate(&self) -> &S {
        &self.surrogate
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    pub fn into_surrogate(self) -> S {
        self.surrogate
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn adaptations(&self) -> u64 {
        self.adaptations
    }

    /// Expensive evaluations that failed and were scored as zero density.
    pub fn failures(&self) -> u64 {
        self.failures
    }

    fn current_cheap(&mut self) -> Result<Option<f64>> {
        let generation = self.surrogate.generation();
        if self.state.cheap_generation != generation || self.state.log_cheap.is_none() {
            self.state.log_cheap = self.surrogate.log_cheap(&self.state.theta, &self.state.psi)?;
            self.state.cheap_generation = generation;
        }
        Ok(self.state.log_cheap)
    }

    fn row(&self, branch: Branch, stage: u8, accepted: bool, final_prob: Option<f64>) -> TraceRow {
        let cheap_known = self.state.cheap_generation == self.surrogate.generation();
        TraceRow {
            iter: self.iter,
            branch,
            stage,
            accepted,
            i_n: self.state.i,
            log_expensive: self.state.log_expensive,
            log_cheap: if cheap_known { self.state.log_cheap } else { None },
            theta: self.state.theta.clone(),
            final_prob,
        }
    }

    fn expensive(&mut self, theta: &[f64]) -> f64 {
        match self.target.log_density(theta, &mut self.rng) {
            Ok(v) if !v.is_nan() => v,
            Ok(_) => {
                log::warn!("expensive density returned NaN at {theta:?}; rejecting");
                self.failures += 1;
                f64::NEG_INFINITY
            }
            Err(e) => {
                log::warn!("expensive evaluation failed at {theta:?}: {e}; rejecting");
                self.failures += 1;
                f64::NEG_INFINITY
            }
        }
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<TraceRow> {
        self.iter += 1;
        let mut branch = if self.rng.random::<f64>() < self.config.beta {
            Kernel::Fixed
        } else {
            Kernel::DelayedAcceptance
        };
        let mut cheap_cur = None;
        if branch == Kernel::DelayedAcceptance {
            cheap_cur = self.current_cheap()?;
            if cheap_cur.is_none() {
                branch = Kernel::Fixed;
            }
        }
        let theta_star = self.spec.propose(&self.state.theta, branch, &mut self.rng);
        if self.target.log_prior(&theta_star) == f64::NEG_INFINITY {
            return Ok(self.row(branch, 0, false, Some(0.0)));
        }

        let psi_star = self.surrogate.coordinates(&theta_star);
        let mut cheap_star = None;
        if let Some(cc) = cheap_cur {
            let cs = self
                .surrogate
                .log_cheap(&theta_star, &psi_star)?
                .ok_or_else(|| Error::InvalidState("surrogate stopped answering".into()))?;
            let a1 = super::stage1_accept_prob(cc, cs, 0.0)?;
            if self.rng.random::<f64>() >= a1 {
                return Ok(self.row(branch, 1, false, Some(a1)));
            }
            cheap_star = Some(cs);
        }

        let value = self.expensive(&theta_star);
        self.state.i += 1;
        let prob = match (cheap_cur, cheap_star) {
            (Some(cc), Some(cs)) => {
                if value == f64::NEG_INFINITY {
                    0.0
                } else {
                    super::stage2_accept_prob(self.state.log_expensive, value, cc, cs)?
                }
            }
            _ => super::mh_accept_prob(self.state.log_expensive, value, 0.0, 0.0)?,
        };
        let accepted = self.rng.random::<f64>() < prob;

        if value.is_finite() {
            self.pending.push((psi_star.clone(), value));
        }
        let p = self.config.schedule.prob(self.state.i);
        let flush = p >= 1.0 || (p > 0.0 && self.rng.random::<f64>() < p);
        if flush {
            self.adaptations += 1;
            for (coords, v) in self.pending.drain(..) {
                self.surrogate.absorb(coords, v)?;
            }
        }

        if accepted {
            self.state.theta = theta_star;
            self.state.psi = psi_star;
            self.state.log_expensive = value;
            self.state.log_cheap = cheap_star;
            self.state.cheap_generation = if flush || cheap_star.is_none() {
                u64::MAX
            } else {
                self.surrogate.generation()
            };
        }
        Ok(self.row(branch, 2, accepted, Some(prob)))
    }

    /// Iterates until the budget is spent; the budget is checked before each
    /// iteration, so it is overrun by at most one iteration.
    pub fn run(&mut self, budget: Budget) -> Result<Trace> {
        let mut trace = Trace::new(self.target.dim());
        let start = Instant::now();
        let first = self.iter;
        let first_i = self.state.i;
        loop {
            let done = match budget {
                Budget::Iterations(n) => self.iter - first >= n,
                Budget::ExpensiveEvaluations(n) => self.state.i - first_i >= n,
                Budget::WallClock(d) => start.elapsed() >= d,
            };
            if done {
                break;
            }
            trace.rows.push(self.step()?);
        }
        Ok(trace)
    }
}
