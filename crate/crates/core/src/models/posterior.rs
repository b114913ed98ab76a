use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    bootstrap_pf_loglik, corrupt_observations, gillespie_simulate, lna_marginal_loglik,
    lna_simulate, log_prior, Autoregulatory, Dataset, LotkaVolterra, MjpDynamics,
    ParticleFilterConfig, RkfOptions,
};
use crate::error::{invalid, Error, Result};
use crate::kernels::{TargetKind, TargetModel};

pub const LV_X0: [f64; 2] = [71.0, 79.0];
pub const LV_NU: [f64; 3] = [1.0, 0.005, 0.6];
pub const LV_SIGMA: [f64; 2] = [8.0, 8.0];

pub const AR_X0: [f64; 4] = [5.0, 8.0, 8.0, 8.0];
pub const AR_K: f64 = 10.0;
pub const AR_NU: [f64; 8] = [0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1];
pub const AR_SIGMA: [f64; 4] = [0.5, 0.5, 1.0, 1.0];
pub const AR_FIXED_NU1: f64 = 0.1;
pub const AR_FIXED_NU5: f64 = 0.1;

/// `log(nu1, nu2, nu3, sigma1, sigma2)` at the data-generating values.
pub fn lv_true_theta() -> Vec<f64> {
    LV_NU.iter().chain(&LV_SIGMA).map(|v| v.ln()).collect()
}

/// `log(nu2, nu3, nu4, nu6, nu7, nu8, sigma1..sigma4)` at the
/// data-generating values.
pub fn ar_true_theta() -> Vec<f64> {
    [1, 2, 3, 5, 6, 7]
        .iter()
        .map(|&i| AR_NU[i])
        .chain(AR_SIGMA)
        .map(|v| v.ln())
        .collect()
}

/// Prey-predator counts at integer times 0..=50 from exact simulation, with
/// `N(0, 8^2)` noise.
pub fn lv_dataset(seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..=50).map(f64::from).collect();
    let path = gillespie_simulate(&LotkaVolterra::default(), &LV_X0, &LV_NU, 0.0, &times, &mut rng)?;
    corrupt_observations(&times, &path, &LV_SIGMA, &mut rng)
}

/// Autoregulatory data simulated from the linear noise approximation:
/// `which = 1` gives 101 observations on [0, 100], `which = 2` gives 201
/// observations on [0, 1000].
pub fn ar_dataset(which: u8, seed: u64) -> Result<Dataset> {
    let (n, end) = match which {
        1 => (101usize, 100.0),
        2 => (201usize, 1000.0),
        _ => return Err(invalid(format!("autoregulatory dataset must be 1 or 2, got {which}"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect();
    let net = Autoregulatory::new(AR_K)?;
    let path = lna_simulate(&net, &AR_NU, &AR_X0, &times, &RkfOptions::default(), &mut rng)?;
    corrupt_observations(&times, &path, &AR_SIGMA, &mut rng)
}

/// Posterior over the five Lotka-Volterra log-parameters, estimated by a
/// bootstrap particle filter over exact simulations.
#[derive(Clone, Debug)]
pub struct LotkaVolterraPosterior {
    net: LotkaVolterra,
    data: Dataset,
    x0: Vec<f64>,
    pf: ParticleFilterConfig,
}

impl LotkaVolterraPosterior {
    pub fn new(data: Dataset, x0: Vec<f64>, pf: ParticleFilterConfig) -> Result<Self> {
        if data.dim() != 2 || x0.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: data.dim() });
        }
        Ok(Self {
            net: LotkaVolterra::default(),
            data,
            x0,
            pf,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn log_likelihood(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        let p: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let dynamics = MjpDynamics {
            net: &self.net,
            nu: &p[..3],
            x0: &self.x0,
            t0: self.data.times[0],
            sigma: &p[3..5],
        };
        bootstrap_pf_loglik(&dynamics, &self.data, &self.pf, rng)
    }
}

impl TargetModel for LotkaVolterraPosterior {
    fn dim(&self) -> usize {
        5
    }

    fn kind(&self) -> TargetKind {
        TargetKind::Stochastic
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        log_prior(theta)
    }

    fn log_density(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.log_prior(theta) + self.log_likelihood(theta, rng)?)
    }
}

/// Posterior over the ten autoregulatory log-parameters under the linear
/// noise approximation; `nu1` and `nu5` are held at their true values.
#[derive(Clone, Debug)]
pub struct AutoregulatoryPosterior {
    net: Autoregulatory,
    data: Dataset,
    x0: Vec<f64>,
    opts: RkfOptions,
}

impl AutoregulatoryPosterior {
    pub fn new(data: Dataset, x0: Vec<f64>, opts: RkfOptions) -> Result<Self> {
        if data.dim() != 4 || x0.len() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: data.dim() });
        }
        Ok(Self {
            net: Autoregulatory::new(AR_K)?,
            data,
            x0,
            opts,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Full rate vector `nu1..nu8` and noise scales from a parameter vector.
    pub fn unpack(theta: &[f64]) -> ([f64; 8], [f64; 4]) {
        let e: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let nu = [AR_FIXED_NU1, e[0], e[1], e[2], AR_FIXED_NU5, e[3], e[4], e[5]];
        (nu, [e[6], e[7], e[8], e[9]])
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let (nu, sigma) = Self::unpack(theta);
        lna_marginal_loglik(&self.net, &nu, &sigma, &self.data, &self.x0, &self.opts)
    }
}

impl TargetModel for AutoregulatoryPosterior {
    fn dim(&self) -> usize {
        10
    }

    fn kind(&self) -> TargetKind {
        TargetKind::Exact
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        log_prior(theta)
    }

    fn log_density(&self, theta: &[f64], _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.log_prior(theta) + self.log_likelihood(theta)?)
    }
}
