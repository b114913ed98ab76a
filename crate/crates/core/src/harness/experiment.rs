use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BetaSetting, MergeRadius, ModelId, RunConfig};
use super::diagnostics::{summarize, tree_stats_key_values, Diagnostics, MIN_ESS_LENGTH};
use crate::error::{invalid, Error, Result};
use crate::kdtree::{read_snapshot, write_snapshot, KdTree, TreeEntry, TreeStats};
use crate::kernels::{
    choose_beta, lambda_exact, lambda_lotka_volterra, pilot_run, probe_stage1_rate, AdaptationSchedule,
    DaSampler, GaussianTarget, NoisyGaussianTarget, PilotConfig, ProposalSpec, SamplerConfig, TargetKind,
    TargetModel, Trace, TreeSurrogate,
};
use crate::models::{
    ar_dataset, ar_true_theta, lv_dataset, lv_true_theta, AutoregulatoryPosterior, Dataset,
    LotkaVolterraPosterior, ParticleFilterConfig, RkfOptions, AR_X0, LV_X0,
};
use crate::surrogate::{merge_radius, SurrogateConfig, WhiteningTransform};

/// Pilot proposal scale before any covariance is known, per coordinate.
const PILOT_SCALE_MODEL: f64 = 0.1;

/// Any of the targets the harness knows how to build.
#[derive(Clone, Debug)]
pub enum AnyTarget {
    LotkaVolterra(LotkaVolterraPosterior),
    Autoregulatory(AutoregulatoryPosterior),
    Gaussian(GaussianTarget),
    NoisyGaussian(NoisyGaussianTarget),
}

impl TargetModel for AnyTarget {
    fn dim(&self) -> usize {
        match self {
            Self::LotkaVolterra(t) => t.dim(),
            Self::Autoregulatory(t) => t.dim(),
            Self::Gaussian(t) => t.dim(),
            Self::NoisyGaussian(t) => t.dim(),
        }
    }

    fn kind(&self) -> TargetKind {
        match self {
            Self::LotkaVolterra(t) => t.kind(),
            Self::Autoregulatory(t) => t.kind(),
            Self::Gaussian(t) => t.kind(),
            Self::NoisyGaussian(t) => t.kind(),
        }
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        match self {
            Self::LotkaVolterra(t) => t.log_prior(theta),
            Self::Autoregulatory(t) => t.log_prior(theta),
            Self::Gaussian(t) => t.log_prior(theta),
            Self::NoisyGaussian(t) => t.log_prior(theta),
        }
    }

    fn log_density(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        match self {
            Self::LotkaVolterra(t) => t.log_density(theta, rng),
            Self::Autoregulatory(t) => t.log_density(theta, rng),
            Self::Gaussian(t) => t.log_density(theta, rng),
            Self::NoisyGaussian(t) => t.log_density(theta, rng),
        }
    }
}

/// Unit variances with correlation 0.5 between every pair.
pub fn benchmark_gaussian(dim: usize) -> Result<GaussianTarget> {
    let cov = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.5 });
    GaussianTarget::new(vec![0.0; dim], cov)
}

/// Loads the dataset named by the configuration, or simulates one from
/// `data_seed` when none is given, then truncates it.
pub fn load_dataset(cfg: &RunConfig) -> Result<Option<Dataset>> {
    let data = match (cfg.model, &cfg.dataset) {
        (ModelId::Gaussian | ModelId::NoisyGaussian, _) => return Ok(None),
        (_, Some(path)) => Dataset::read_csv(BufReader::new(open(path)?))?,
        (ModelId::LotkaVolterra, None) => lv_dataset(cfg.data_seed)?,
        (ModelId::Autoregulatory, None) => ar_dataset(1, cfg.data_seed)?,
    };
    Ok(Some(match cfg.truncate {
        Some(n) => data.truncated(n)?,
        None => data,
    }))
}

/// The target and the point the pilot starts from.
pub fn build_target(cfg: &RunConfig) -> Result<(AnyTarget, Vec<f64>)> {
    let data = load_dataset(cfg)?;
    Ok(match cfg.model {
        ModelId::LotkaVolterra => {
            let pf = ParticleFilterConfig {
                particles: cfg.particles,
                resampling: cfg.resampling,
            };
            let post = LotkaVolterraPosterior::new(data.ok_or_else(|| invalid("model needs a dataset"))?, LV_X0.to_vec(), pf)?;
            (AnyTarget::LotkaVolterra(post), lv_true_theta())
        }
        ModelId::Autoregulatory => {
            let opts = RkfOptions {
                rtol: cfg.rtol,
                atol: cfg.atol,
                ..RkfOptions::default()
            };
            let post = AutoregulatoryPosterior::new(data.ok_or_else(|| invalid("model needs a dataset"))?, AR_X0.to_vec(), opts)?;
            (AnyTarget::Autoregulatory(post), ar_true_theta())
        }
        ModelId::Gaussian => (
            AnyTarget::Gaussian(benchmark_gaussian(cfg.gaussian_dim)?),
            vec![0.0; cfg.gaussian_dim],
        ),
        ModelId::NoisyGaussian => (
            AnyTarget::NoisyGaussian(NoisyGaussianTarget::new(
                benchmark_gaussian(cfg.gaussian_dim)?,
                cfg.noise_sd,
            )?),
            vec![0.0; cfg.gaussian_dim],
        ),
    })
}

pub fn default_lambda(model: ModelId, dim: usize) -> f64 {
    match model {
        ModelId::LotkaVolterra => lambda_lotka_volterra(),
        _ => lambda_exact(dim),
    }
}

/// What a pilot leaves behind for the main run.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotArtifacts {
    pub transform: WhiteningTransform,
    pub v_fixed: DMatrix<f64>,
    /// Tree contents in whitened coordinates.
    pub entries: Vec<TreeEntry>,
    /// Final-round pilot states, used to probe stage-one rates.
    pub samples: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub log_expensive: f64,
    pub alpha1_ref: f64,
    pub acceptance_rate: f64,
}

pub fn run_pilot(cfg: &RunConfig, target: &AnyTarget, theta0: Vec<f64>, seed: u64) -> Result<PilotArtifacts> {
    let d = target.dim();
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(cfg.model, d));
    let s0 = match cfg.model {
        ModelId::Gaussian | ModelId::NoisyGaussian => 1.0,
        _ => PILOT_SCALE_MODEL,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pcfg = PilotConfig {
        n_iters: cfg.pilot_iters,
        rounds: cfg.pilot_rounds,
        lambda,
        theta0,
        v0: DMatrix::identity(d, d) * (lambda * s0 * s0),
        half_bucket: cfg.b,
        k: cfg.k,
        tree_seed: rng.random(),
        n_probe: cfg.n_probe,
    };
    let out = pilot_run(target, &pcfg, &mut rng)?;
    log::info!(
        "pilot: {} evaluations, acceptance {:.3}, reference stage-one rate {:.3}",
        out.evaluations.len(),
        out.acceptance_rate,
        out.alpha1_ref
    );
    Ok(PilotArtifacts {
        entries: out.tree.entries().map(|e| e.to_entry()).collect(),
        transform: out.transform,
        v_fixed: out.v_fixed,
        samples: out.samples,
        theta: out.final_theta,
        log_expensive: out.final_log_expensive,
        alpha1_ref: out.alpha1_ref,
        acceptance_rate: out.acceptance_rate,
    })
}

/// Builds the target and runs the pilot exactly as [`run_experiment`] would
/// for the configured seed.
pub fn pilot_from_config(cfg: &RunConfig) -> Result<PilotArtifacts> {
    let seed = cfg.seed.ok_or_else(|| invalid("a seed is required for a pilot"))?;
    let (target, theta0) = build_target(cfg)?;
    run_pilot(cfg, &target, theta0, derive_seeds(seed)[0])
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn csv_row(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_row(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}"))))
        .collect()
}

impl PilotArtifacts {
    /// Writes `whitening.csv`, `tree.csv`, `v_fixed.csv`, `samples.csv` and
    /// `pilot.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.transform.write_csv(create(&dir.join("whitening.csv"))?)?;
        let d = self.transform.dim();
        let tree = KdTree::build_balanced(self.entries.clone(), d, self.entries.len().max(2), 0)?;
        write_snapshot(&tree, create(&dir.join("tree.csv"))?)?;
        let mut v = create(&dir.join("v_fixed.csv"))?;
        for r in 0..d {
            writeln!(v, "{}", csv_row(self.v_fixed.row(r).iter().copied()))?;
        }
        let mut s = create(&dir.join("samples.csv"))?;
        for x in &self.samples {
            writeln!(s, "{}", csv_row(x.iter().copied()))?;
        }
        let mut p = create(&dir.join("pilot.txt"))?;
        writeln!(p, "theta = {}", csv_row(self.theta.iter().copied()))?;
        writeln!(p, "log_expensive = {:?}", self.log_expensive)?;
        writeln!(p, "alpha1_ref = {:?}", self.alpha1_ref)?;
        writeln!(p, "acceptance_rate = {:?}", self.acceptance_rate)?;
        p.flush()?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let transform = WhiteningTransform::read_csv(BufReader::new(open(&dir.join("whitening.csv"))?))?;
        let d = transform.dim();
        let entries = read_snapshot(BufReader::new(open(&dir.join("tree.csv"))?))?;
        let rows = |name: &str| -> Result<Vec<Vec<f64>>> {
            fs::read_to_string(dir.join(name))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(parse_row)
                .collect()
        };
        let v = rows("v_fixed.csv")?;
        if v.len() != d || v.iter().any(|r| r.len() != d) {
            return Err(Error::Parse("v_fixed.csv must hold a d x d matrix".into()));
        }
        let v_fixed = DMatrix::from_row_slice(d, d, &v.concat());
        let samples = rows("samples.csv")?;
        let text = fs::read_to_string(dir.join("pilot.txt"))?;
        let field = |key: &str| -> Result<&str> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| Error::Parse(format!("pilot.txt lacks {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            field(key)?.parse().map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        Ok(Self {
            transform,
            v_fixed,
            entries,
            samples,
            theta: parse_row(field("theta")?)?,
            log_expensive: num("log_expensive")?,
            alpha1_ref: num("alpha1_ref")?,
            acceptance_rate: num("acceptance_rate")?,
        })
    }
}

/// Values resolved while setting a run up.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub beta: f64,
    pub epsilon: f64,
    pub schedule: AdaptationSchedule,
    /// Stage-one rates probed at `xi = 1` and at the run's `xi`.
    pub alpha1_probe: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub diagnostics: Option<Diagnostics>,
    pub tree_stats: TreeStats,
    pub resolved: Resolved,
    pub adaptations: u64,
    pub failures: u64,
    pub merges: u64,
    pub wall_seconds: f64,
    pub tree: KdTree,
    pub transform: WhiteningTransform,
}

/// Seeds for the pilot, the tree, the stage-one probe and the chain, drawn
/// in a fixed order from the run seed.
fn derive_seeds(seed: u64) -> [u64; 4] {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    [master.random(), master.random(), master.random(), master.random()]
}

/// Runs the pilot (or loads it from `pilot_dir`) and then the configured
/// sampler. With `out` set, writes the trace, metadata, diagnostics, tree
/// snapshot and whitening transform there.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    let seed = cfg
        .seed
        .ok_or_else(|| invalid("a seed is required for a run"))?;
    let (target, theta0) = build_target(cfg)?;
    let pilot = match &cfg.pilot_dir {
        Some(dir) => PilotArtifacts::read_dir(dir)?,
        None => run_pilot(cfg, &target, theta0, derive_seeds(seed)[0])?,
    };
    run_with_pilot(cfg, &target, &pilot)
}

/// Runs the configured sampler from an existing pilot.
pub fn run_with_pilot(cfg: &RunConfig, target: &AnyTarget, pilot: &PilotArtifacts) -> Result<RunOutput> {
    let seed = cfg
        .seed
        .ok_or_else(|| invalid("a seed is required for a run"))?;
    let [_, tree_seed, probe_seed, chain_seed] = derive_seeds(seed);
    let d = target.dim();
    if pilot.transform.dim() != d || pilot.theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: pilot.transform.dim(),
        });
    }
    let epsilon = match cfg.merge_radius {
        MergeRadius::Fixed(e) => e,
        MergeRadius::Calibrated { n, e_target } => {
            merge_radius(n.unwrap_or(pilot.entries.len() as f64).max(1.0), d, e_target)?
        }
    };
    let tree = KdTree::build_balanced(pilot.entries.clone(), d, cfg.b, tree_seed)?;
    let scfg = SurrogateConfig {
        k: cfg.k,
        epsilon,
        weight_exponent: cfg.weight_exponent,
    };
    let surrogate = TreeSurrogate::new(tree, pilot.transform.clone(), scfg, target.kind())?;
    let delayed = cfg.sampler.is_delayed();
    let xi = if delayed { cfg.xi } else { 1.0 };
    let spec = ProposalSpec::new(pilot.v_fixed.clone(), xi)?;
    let (beta, alpha1_probe) = match (delayed, cfg.beta) {
        (false, _) => (1.0, None),
        (true, BetaSetting::Fixed(b)) => (b, None),
        (true, BetaSetting::Auto) => {
            let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
            let a_ref = probe_stage1_rate(target, &surrogate, &spec.with_xi(1.0)?, &pilot.samples, cfg.n_probe, &mut rng)?;
            let a_new = probe_stage1_rate(target, &surrogate, &spec, &pilot.samples, cfg.n_probe, &mut rng)?;
            (choose_beta(a_ref, cfg.beta_ref, a_new)?, Some((a_ref, a_new)))
        }
    };
    // Plain chains never consult the surrogate, so they do not grow it.
    let schedule = if delayed {
        cfg.schedule
    } else {
        AdaptationSchedule::Harmonic { c: f64::INFINITY }
    };
    let resolved = Resolved {
        beta,
        epsilon,
        schedule,
        alpha1_probe,
    };
    log::info!(
        "run: sampler {} beta {beta:.4} xi {xi} {} epsilon {epsilon:.4}",
        cfg.sampler,
        schedule.describe()
    );
    let mut chain = DaSampler::new(
        target,
        surrogate,
        spec,
        SamplerConfig::new(beta, schedule)?,
        pilot.theta.clone(),
        Some(pilot.log_expensive),
        ChaCha8Rng::seed_from_u64(chain_seed),
    )?;
    let start = Instant::now();
    let trace = chain.run(cfg.budget)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let adaptations = chain.adaptations();
    let failures = chain.failures();
    let surrogate = chain.into_surrogate();
    let merges = surrogate.merges();
    let tree_stats = surrogate.tree().tree_stats();
    let (tree, transform) = surrogate.into_parts();
    let diagnostics = if trace.len() >= MIN_ESS_LENGTH {
        Some(summarize(&trace, 0)?)
    } else {
        log::warn!("trace of {} rows is too short for diagnostics", trace.len());
        None
    };
    let out = RunOutput {
        trace,
        diagnostics,
        tree_stats,
        resolved,
        adaptations,
        failures,
        merges,
        wall_seconds,
        tree,
        transform,
    };
    if let Some(dir) = &cfg.out {
        write_run(dir, cfg, &out)?;
    }
    Ok(out)
}

fn metadata(cfg: &RunConfig, out: &RunOutput) -> String {
    let (bk, bv) = cfg.budget_description();
    let mut s = String::from("# configuration as given\n");
    s.push_str(&cfg.echo());
    s.push_str("# resolved\n");
    let c = match out.resolved.schedule {
        AdaptationSchedule::Harmonic { c } => format!("{c}"),
        AdaptationSchedule::Alternating => "alternating".into(),
    };
    let lines = [
        ("model", cfg.model.to_string()),
        ("sampler", cfg.sampler.to_string()),
        ("seed", cfg.seed.map_or("none".into(), |s| s.to_string())),
        ("dim", out.trace.dim.to_string()),
        ("beta", format!("{:?}", out.resolved.beta)),
        ("xi", format!("{:?}", if cfg.sampler.is_delayed() { cfg.xi } else { 1.0 })),
        ("c", c),
        ("k", cfg.k.to_string()),
        ("b", cfg.b.to_string()),
        ("epsilon", format!("{:?}", out.resolved.epsilon)),
        ("weight_exponent", format!("{:?}", cfg.weight_exponent)),
        (bk.as_str(), bv),
        ("n_iters_run", out.trace.len().to_string()),
        ("expensive_evaluations", out.trace.expensive_evaluations().to_string()),
    ];
    for (k, v) in lines {
        s.push_str(&format!("{k} = {v}\n"));
    }
    if let Some((a, b)) = out.resolved.alpha1_probe {
        s.push_str(&format!("alpha1_probe_ref = {a:?}\nalpha1_probe = {b:?}\n"));
    }
    s
}

fn write_run(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut t = create(&dir.join("trace.csv"))?;
    out.trace.write_csv(&mut t)?;
    t.flush()?;
    fs::write(dir.join("metadata.txt"), metadata(cfg, out))?;
    let mut diag = match &out.diagnostics {
        Some(d) => d.to_key_values(),
        None => "# trace too short for diagnostics\n".into(),
    };
    diag.push_str(&tree_stats_key_values(&out.tree_stats));
    diag.push_str(&format!(
        "adaptations = {}\nmerges = {}\nfailures = {}\nwall_seconds = {}\n",
        out.adaptations, out.merges, out.failures, out.wall_seconds
    ));
    fs::write(dir.join("diagnostics.txt"), diag)?;
    let mut tr = create(&dir.join("tree.csv"))?;
    write_snapshot(&out.tree, &mut tr)?;
    tr.flush()?;
    let mut w = create(&dir.join("whitening.csv"))?;
    out.transform.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Values swept over; empty lists keep the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepGrid {
    pub xi: Vec<String>,
    pub c: Vec<String>,
    pub k: Vec<String>,
    pub b: Vec<String>,
}

impl SweepGrid {
    fn combos(&self) -> Vec<Vec<(String, String)>> {
        let axes: Vec<(&str, &Vec<String>)> = [("xi", &self.xi), ("c", &self.c), ("k", &self.k), ("b", &self.b)]
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let mut out = vec![Vec::new()];
        for (key, vals) in axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((key.to_string(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// Runs one pilot, then every grid point from it, each into its own
/// subdirectory of `out`; writes a `sweep.csv` summary and returns its rows.
pub fn sweep(base: &RunConfig, grid: &SweepGrid, out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let pilot_dir = match &base.pilot_dir {
        Some(p) => p.clone(),
        None => {
            let dir = out.join("pilot");
            pilot_from_config(base)?.write_dir(&dir)?;
            dir
        }
    };
    let header = "run,xi,c,k,b,beta,epsilon,iterations,expensive,alpha1,alpha2,min_ess,min_ess_per_expensive,wall_seconds";
    let mut rows = vec![header.to_string()];
    for (idx, combo) in grid.combos().into_iter().enumerate() {
        let mut pairs = combo.clone();
        let run_dir: PathBuf = out.join(format!("run_{idx:03}"));
        pairs.push(("pilot_dir".into(), pilot_dir.display().to_string()));
        pairs.push(("out".into(), run_dir.display().to_string()));
        let cfg = base.with_overrides(&pairs)?;
        let r = run_experiment(&cfg)?;
        let opt = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x}"));
        let diag = r.diagnostics.as_ref();
        let c = match r.resolved.schedule {
            AdaptationSchedule::Harmonic { c } => format!("{c}"),
            AdaptationSchedule::Alternating => "alternating".into(),
        };
        rows.push(format!(
            "{idx},{},{c},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.xi,
            cfg.k,
            cfg.b,
            r.resolved.beta,
            r.resolved.epsilon,
            r.trace.len(),
            r.trace.expensive_evaluations(),
            opt(diag.and_then(|d| d.alpha1)),
            opt(diag.and_then(|d| d.alpha2)),
            opt(diag.map(|d| d.min_ess)),
            opt(diag.map(|d| d.min_ess_per_expensive())),
            r.wall_seconds
        ));
    }
    fs::write(out.join("sweep.csv"), rows.join("\n") + "\n")?;
    Ok(rows)
}

/// Simulates one of the benchmark datasets: `lv`, `ar1` or `ar2`.
pub fn simulate_dataset(which: &str, seed: u64) -> Result<Dataset> {
    match which {
        "lv" => lv_dataset(seed),
        "ar1" => ar_dataset(1, seed),
        "ar2" => ar_dataset(2, seed),
        _ => Err(invalid(format!("unknown dataset '{which}' (lv, ar1, ar2)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(extra: &str) -> RunConfig {
        RunConfig::parse(&format!(
            "model = gaussian\nsampler = da-mh\nbeta = 0.1\nxi = 1.5\nc = 0.01\npilot_iters = 600\nn_probe = 200\nn_iters = 800\nseed = 3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn run_is_reproducible_and_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(&format!("out = {}\n", dir.path().display()));
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&quick("")).unwrap();
        assert_eq!(a.trace, b.trace);
        for f in ["trace.csv", "metadata.txt", "diagnostics.txt", "tree.csv", "whitening.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let meta = fs::read_to_string(dir.path().join("metadata.txt")).unwrap();
        assert!(meta.contains("seed = 3") && meta.contains("beta = 0.1") && meta.contains("c = 0.01"));
        let back = Trace::read_csv(BufReader::new(File::open(dir.path().join("trace.csv")).unwrap())).unwrap();
        assert_eq!(back.len(), a.trace.len());
    }

    #[test]
    fn pilot_artifacts_round_trip() {
        let cfg = quick("");
        let (target, theta0) = build_target(&cfg).unwrap();
        let p = run_pilot(&cfg, &target, theta0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.write_dir(dir.path()).unwrap();
        let q = PilotArtifacts::read_dir(dir.path()).unwrap();
        assert_eq!(p.transform.mean(), q.transform.mean());
        assert_eq!(p.transform.inv_sqrt(), q.transform.inv_sqrt());
        assert_eq!(p.v_fixed, q.v_fixed);
        assert_eq!(p.samples, q.samples);
        assert_eq!(p.theta, q.theta);
        assert_eq!(p.log_expensive.to_bits(), q.log_expensive.to_bits());
        let key = |e: &TreeEntry| e.position.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let mut pe: Vec<_> = p.entries.iter().map(key).collect();
        let mut qe: Vec<_> = q.entries.iter().map(key).collect();
        pe.sort();
        qe.sort();
        assert_eq!(pe, qe);
    }

    #[test]
    fn plain_mh_and_auto_beta() {
        let mh = run_experiment(&quick("sampler = mh\n")).unwrap();
        assert!(mh.trace.rows.iter().all(|r| r.stage != 1));
        assert_eq!(mh.resolved.beta, 1.0);
        assert_eq!(mh.adaptations, 0);
        let auto = run_experiment(&quick("beta = auto\n")).unwrap();
        let (a_ref, a_new) = auto.resolved.alpha1_probe.unwrap();
        assert!(a_new < a_ref);
        assert!(auto.resolved.beta < 0.05);
        assert!((auto.resolved.beta - 0.05 * a_new / a_ref).abs() < 1e-12);
    }

    #[test]
    fn sweep_runs_every_point() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SweepGrid {
            xi: vec!["1".into(), "2".into()],
            c: vec!["inf".into()],
            ..Default::default()
        };
        let rows = sweep(&quick(""), &grid, dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(dir.path().join("run_001/trace.csv").exists());
        assert!(dir.path().join("sweep.csv").exists());
    }

    #[test]
    fn missing_seed_is_an_error() {
        let mut cfg = quick("");
        cfg.seed = None;
        assert!(run_experiment(&cfg).is_err());
    }
}
