use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use crate::error::{invalid, Error, Result};
use crate::kernels::{AdaptationSchedule, Budget};
use crate::models::Resampling;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelId {
    LotkaVolterra,
    Autoregulatory,
    Gaussian,
    NoisyGaussian,
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lv" | "lotka-volterra" => Ok(Self::LotkaVolterra),
            "ar" | "autoregulatory" => Ok(Self::Autoregulatory),
            "gaussian" => Ok(Self::Gaussian),
            "noisy-gaussian" => Ok(Self::NoisyGaussian),
            _ => Err(invalid(format!("unknown model '{s}' (lv, ar, gaussian, noisy-gaussian)"))),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LotkaVolterra => "lv",
            Self::Autoregulatory => "ar",
            Self::Gaussian => "gaussian",
            Self::NoisyGaussian => "noisy-gaussian",
        })
    }
}

impl ModelId {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Self::LotkaVolterra | Self::NoisyGaussian)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Mh,
    PsMmh,
    DaMh,
    DaPsMmh,
}

impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mh" => Ok(Self::Mh),
            "psmmh" => Ok(Self::PsMmh),
            "da-mh" => Ok(Self::DaMh),
            "da-psmmh" => Ok(Self::DaPsMmh),
            _ => Err(invalid(format!("unknown sampler '{s}' (mh, psmmh, da-mh, da-psmmh)"))),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mh => "mh",
            Self::PsMmh => "psmmh",
            Self::DaMh => "da-mh",
            Self::DaPsMmh => "da-psmmh",
        })
    }
}

impl SamplerKind {
    pub fn is_delayed(&self) -> bool {
        matches!(self, Self::DaMh | Self::DaPsMmh)
    }

    pub fn is_pseudo_marginal(&self) -> bool {
        matches!(self, Self::PsMmh | Self::DaPsMmh)
    }
}

/// Fixed-kernel probability: a number, or rescaled from a reference value
/// at `xi = 1` by the stage-one rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSetting {
    Fixed(f64),
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MergeRadius {
    Fixed(f64),
    /// From the expected tree size; `n = None` uses the pilot tree size.
    Calibrated { n: Option<f64>, e_target: f64 },
}

/// Everything a run needs. Parsed from flat `key = value` lines; the
/// original pairs are kept for a verbatim echo.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelId,
    pub dataset: Option<PathBuf>,
    pub data_seed: u64,
    /// Keep only the first `truncate` observations.
    pub truncate: Option<usize>,
    pub sampler: SamplerKind,
    pub beta: BetaSetting,
    pub beta_ref: f64,
    pub xi: f64,
    pub schedule: AdaptationSchedule,
    pub k: usize,
    pub b: usize,
    pub merge_radius: MergeRadius,
    pub weight_exponent: f64,
    pub particles: usize,
    pub resampling: Resampling,
    pub budget: Budget,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub pilot_iters: u64,
    pub pilot_rounds: usize,
    pub pilot_dir: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    pub noise_sd: f64,
    pub gaussian_dim: usize,
    pub n_probe: usize,
    pub raw: Vec<(String, String)>,
}

pub const KEYS: &[&str] = &[
    "model", "dataset", "data_seed", "truncate", "sampler", "beta", "beta_ref", "xi", "c",
    "schedule", "k", "b", "epsilon", "eps_n", "eps_target", "weight_exponent", "particles",
    "resampling", "n_iters", "n_expensive", "wall_seconds", "seed", "out", "pilot_iters",
    "pilot_rounds", "pilot_dir", "lambda", "rtol", "atol", "noise_sd", "gaussian_dim", "n_probe",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelId::Gaussian,
            dataset: None,
            data_seed: 1,
            truncate: None,
            sampler: SamplerKind::DaMh,
            beta: BetaSetting::Fixed(0.05),
            beta_ref: 0.05,
            xi: 1.0,
            schedule: AdaptationSchedule::Harmonic { c: 0.001 },
            k: 5,
            b: 10,
            merge_radius: MergeRadius::Calibrated { n: None, e_target: 0.5 },
            weight_exponent: 1.0,
            particles: 200,
            resampling: Resampling::Multinomial,
            budget: Budget::Iterations(10_000),
            seed: None,
            out: None,
            pilot_iters: 5_000,
            pilot_rounds: 3,
            pilot_dir: None,
            lambda: None,
            rtol: 1e-6,
            atol: 1e-8,
            noise_sd: 1.0,
            gaussian_dim: 2,
            n_probe: 2_000,
            raw: Vec::new(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| invalid(format!("bad value '{v}' for {key}")))
}

fn real(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "infinity" | "Inf" => Ok(f64::INFINITY),
        _ => num(key, v),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.raw = pairs;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides on top of this configuration.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut all = self.raw.clone();
        for (k, v) in pairs {
            all.retain(|(key, _)| key != k);
            all.push((k.clone(), v.clone()));
        }
        Self::from_pairs(all)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model" => self.model = v.parse()?,
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "data_seed" => self.data_seed = num(key, v)?,
            "truncate" => self.truncate = Some(num(key, v)?),
            "sampler" => self.sampler = v.parse()?,
            "beta" => {
                self.beta = if v == "auto" {
                    BetaSetting::Auto
                } else {
                    BetaSetting::Fixed(real(key, v)?)
                }
            }
            "beta_ref" => self.beta_ref = real(key, v)?,
            "xi" => self.xi = real(key, v)?,
            "c" => self.schedule = AdaptationSchedule::harmonic(real(key, v)?)?,
            "schedule" => match v {
                "alternating" => self.schedule = AdaptationSchedule::Alternating,
                "harmonic" => {
                    if !matches!(self.schedule, AdaptationSchedule::Harmonic { .. }) {
                        self.schedule = AdaptationSchedule::Harmonic { c: 0.001 };
                    }
                }
                _ => return Err(invalid(format!("unknown schedule '{v}'"))),
            },
            "k" => self.k = num(key, v)?,
            "b" => self.b = num(key, v)?,
            "epsilon" => self.merge_radius = MergeRadius::Fixed(real(key, v)?),
            "eps_n" | "eps_target" => {
                let (mut n, mut e) = match self.merge_radius {
                    MergeRadius::Calibrated { n, e_target } => (n, e_target),
                    MergeRadius::Fixed(_) => (None, 0.5),
                };
                if key == "eps_n" {
                    n = Some(real(key, v)?);
                } else {
                    e = real(key, v)?;
                }
                self.merge_radius = MergeRadius::Calibrated { n, e_target: e };
            }
            "weight_exponent" => self.weight_exponent = real(key, v)?,
            "particles" => self.particles = num(key, v)?,
            "resampling" => {
                self.resampling = match v {
                    "multinomial" => Resampling::Multinomial,
                    "systematic" => Resampling::Systematic,
                    _ => return Err(invalid(format!("unknown resampling '{v}'"))),
                }
            }
            "n_iters" => self.budget = Budget::Iterations(num(key, v)?),
            "n_expensive" => self.budget = Budget::ExpensiveEvaluations(num(key, v)?),
            "wall_seconds" => self.budget = Budget::WallClock(Duration::from_secs_f64(real(key, v)?)),
            "seed" => self.seed = Some(num(key, v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "pilot_iters" => self.pilot_iters = num(key, v)?,
            "pilot_rounds" => self.pilot_rounds = num(key, v)?,
            "pilot_dir" => self.pilot_dir = Some(PathBuf::from(v)),
            "lambda" => self.lambda = Some(real(key, v)?),
            "rtol" => self.rtol = real(key, v)?,
            "atol" => self.atol = real(key, v)?,
            "noise_sd" => self.noise_sd = real(key, v)?,
            "gaussian_dim" => self.gaussian_dim = num(key, v)?,
            "n_probe" => self.n_probe = num(key, v)?,
            _ => return Err(invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampler.is_pseudo_marginal() != self.model.is_stochastic() {
            return Err(invalid(format!(
                "sampler {} does not match model {}: use {} samplers",
                self.sampler,
                self.model,
                if self.model.is_stochastic() { "psmmh/da-psmmh" } else { "mh/da-mh" }
            )));
        }
        if let BetaSetting::Fixed(b) = self.beta {
            if !(b > 0.0 && b <= 1.0) || (self.sampler.is_delayed() && b >= 1.0) {
                return Err(invalid(format!("beta must be in (0, 1) for delayed acceptance, got {b}")));
            }
        }
        if !(self.beta_ref > 0.0 && self.beta_ref < 1.0) {
            return Err(invalid("beta_ref must be in (0, 1)"));
        }
        if !(self.xi > 0.0) || !self.xi.is_finite() {
            return Err(invalid("xi must be positive"));
        }
        if self.b < 2 || self.k == 0 || self.k > self.b {
            return Err(invalid(format!("need b >= 2 and 1 <= k <= b, got k = {}, b = {}", self.k, self.b)));
        }
        if self.particles == 0 {
            return Err(invalid("particles must be at least 1"));
        }
        if self.pilot_rounds == 0 {
            return Err(invalid("pilot_rounds must be at least 1"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.gaussian_dim == 0 {
            return Err(invalid("gaussian_dim must be positive"));
        }
        Ok(())
    }

    /// Key-value lines echoing the configuration as given.
    pub fn echo(&self) -> String {
        self.raw.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn budget_description(&self) -> (String, String) {
        match self.budget {
            Budget::Iterations(n) => ("n_iters".into(), n.to_string()),
            Budget::ExpensiveEvaluations(n) => ("n_expensive".into(), n.to_string()),
            Budget::WallClock(d) => ("wall_seconds".into(), d.as_secs_f64().to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes() {
        let text = "# run\nmodel = ar\nsampler = da-mh\nxi = 1.5\nc = inf # off\nk = 5\nb = 10\nn_expensive = 300\nseed = 4\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model, ModelId::Autoregulatory);
        assert_eq!(cfg.schedule, AdaptationSchedule::Harmonic { c: f64::INFINITY });
        assert_eq!(cfg.budget, Budget::ExpensiveEvaluations(300));
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(RunConfig::parse(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn rejects_inconsistent_settings() {
        assert!(RunConfig::parse("model = lv\nsampler = da-mh\n").is_err());
        assert!(RunConfig::parse("model = ar\nsampler = psmmh\n").is_err());
        assert!(RunConfig::parse("k = 11\nb = 10\n").is_err());
        assert!(RunConfig::parse("colour = blue\n").is_err());
        assert!(RunConfig::parse("xi 2\n").is_err());
        assert!(RunConfig::parse("sampler = da-mh\nbeta = 1\n").is_err());
        assert!(RunConfig::parse("model = lv\nsampler = psmmh\nbeta = 1\n").is_ok());
    }

    #[test]
    fn overrides_replace_keys() {
        let cfg = RunConfig::parse("xi = 1.0\nk = 3\n").unwrap();
        let o = cfg.with_overrides(&[("xi".into(), "2.5".into())]).unwrap();
        assert_eq!(o.xi, 2.5);
        assert_eq!(o.k, 3);
        assert_eq!(o.raw.iter().filter(|(k, _)| k == "xi").count(), 1);
    }
}
