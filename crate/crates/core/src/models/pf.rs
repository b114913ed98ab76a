use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::gillespie::gillespie_advance;
use super::{Dataset, ReactionNetwork};
use crate::error::{invalid, Error, Result};
use crate::special::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Latent dynamics and observation density for a bootstrap filter.
pub trait ParticleDynamics {
    type State: Clone;

    /// Time at which [`ParticleDynamics::initial`] states live.
    fn start_time(&self) -> f64;

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    fn propagate<R: Rng + ?Sized>(&self, state: &mut Self::State, t0: f64, t1: f64, rng: &mut R) -> Result<()>;

    fn log_obs(&self, state: &Self::State, y: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleFilterConfig {
    pub particles: usize,
    pub resampling: Resampling,
}

impl ParticleFilterConfig {
    pub fn new(particles: usize) -> Result<Self> {
        if particles == 0 {
            return Err(invalid("particle filter needs at least one particle"));
        }
        Ok(Self {
            particles,
            resampling: Resampling::Multinomial,
        })
    }
}

/// Fills `idx` with ancestor indices drawn in proportion to `exp(logw)`.
fn resample<R: Rng + ?Sized>(logw: &[f64], scheme: Resampling, idx: &mut Vec<usize>, rng: &mut R) {
    let m = logw.len();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    idx.clear();
    // sorted uniforms on (0, total): from normalised exponential spacings
    // for multinomial, a single shifted grid for systematic
    let points: Vec<f64> = match scheme {
        Resampling::Multinomial => {
            let mut acc = 0.0;
            let gaps: Vec<f64> = (0..=m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let sum: f64 = gaps.iter().sum();
            gaps[..m]
                .iter()
                .map(|g| {
                    acc += g;
                    acc / sum * total
                })
                .collect()
        }
        Resampling::Systematic => {
            let u = rng.random::<f64>();
            (0..m).map(|i| (i as f64 + u) / m as f64 * total).collect()
        }
    };
    let mut cum = 0.0;
    let mut j = 0;
    for p in points {
        while j + 1 < m && cum + w[j] <= p {
            cum += w[j];
            j += 1;
        }
        idx.push(j);
    }
}

/// Log of the bootstrap particle filter's unbiased likelihood estimate.
/// Returns `-inf` when every particle weight vanishes at some time.
pub fn bootstrap_pf_loglik<D, R>(
    dynamics: &D,
    data: &Dataset,
    cfg: &ParticleFilterConfig,
    rng: &mut R,
) -> Result<f64>
where
    D: ParticleDynamics,
    R: Rng + ?Sized,
{
    let m = cfg.particles;
    if m == 0 {
        return Err(invalid("particle filter needs at least one particle"));
    }
    let mut particles: Vec<D::State> = (0..m).map(|_| dynamics.initial(rng)).collect();
    let mut scratch: Vec<D::State> = Vec::with_capacity(m);
    let mut logw = vec![0.0; m];
    let mut idx = Vec::with_capacity(m);
    let mut t_prev = dynamics.start_time();
    let mut ll = 0.0;
    let n = data.len();
    for (j, (&t, y)) in data.times.iter().zip(&data.obs).enumerate() {
        if t < t_prev {
            return Err(invalid(format!("observation at {t} precedes the filter time {t_prev}")));
        }
        if t > t_prev {
            for p in particles.iter_mut() {
                dynamics.propagate(p, t_prev, t, rng)?;
            }
        }
        for (w, p) in logw.iter_mut().zip(&particles) {
            *w = dynamics.log_obs(p, y);
        }
        let inc = log_sum_exp(&logw) - (m as f64).ln();
        if inc.is_nan() {
            return Err(Error::NonFinite("particle weights are NaN".into()));
        }
        if inc == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        ll += inc;
        if j + 1 < n {
            resample(&logw, cfg.resampling, &mut idx, rng);
            scratch.clear();
            scratch.extend(idx.iter().map(|&i| particles[i].clone()));
            std::mem::swap(&mut particles, &mut scratch);
        }
        t_prev = t;
    }
    Ok(ll)
}

fn gaussian_obs(x: &[f64], y: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(sigma)
        .map(|((xi, yi), s)| {
            let z = (yi - xi) / s;
            -0.5 * (LN_2PI + z * z) - s.ln()
        })
        .sum()
}

/// A Markov jump process observed with independent Gaussian noise, started
/// from a known state.
pub struct MjpDynamics<'a, N: ?Sized> {
    pub net: &'a N,
    pub nu: &'a [f64],
    pub x0: &'a [f64],
    pub t0: f64,
    pub sigma: &'a [f64],
}

impl<N: ReactionNetwork + ?Sized> ParticleDynamics for MjpDynamics<'_, N> {
    type State = Vec<f64>;

    fn start_time(&self) -> f64 {
        self.t0
    }

    fn initial<R: Rng + ?Sized>(&self, _rng: &mut R) -> Vec<f64> {
        self.x0.to_vec()
    }

    fn propagate<R: Rng + ?Sized>(&self, state: &mut Vec<f64>, t0: f64, t1: f64, rng: &mut R) -> Result<()> {
        gillespie_advance(self.net, state, self.nu, t0, t1, rng).map(|_| ())
    }

    fn log_obs(&self, state: &Vec<f64>, y: &[f64]) -> f64 {
        gaussian_obs(state, y, self.sigma)
    }
}

/// Scalar AR(1) state `x' = a x + N(0, q)` per observation interval, observed
/// as `y = x + N(0, r)`, with `x ~ N(m0, p0)` at the first observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianDynamics {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub t0: f64,
}

impl ParticleDynamics for LinearGaussianDynamics {
    type State = f64;

    fn start_time(&self) -> f64 {
        self.t0
    }

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.m0 + self.p0.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn propagate<R: Rng + ?Sized>(&self, state: &mut f64, _t0: f64, _t1: f64, rng: &mut R) -> Result<()> {
        *state = self.a * *state + self.q.sqrt() * rng.sample::<f64, _>(StandardNormal);
        Ok(())
    }

    fn log_obs(&self, state: &f64, y: &[f64]) -> f64 {
        let z = y[0] - state;
        -0.5 * (LN_2PI + self.r.ln() + z * z / self.r)
    }
}

/// Exact log-likelihood of [`LinearGaussianDynamics`] by the Kalman filter.
pub fn kalman_loglik(model: &LinearGaussianDynamics, data: &Dataset) -> f64 {
    let (mut m, mut p) = (model.m0, model.p0);
    let mut ll = 0.0;
    for (j, y) in data.obs.iter().enumerate() {
        if j > 0 {
            m *= model.a;
            p = model.a * model.a * p + model.q;
        }
        let s = p + model.r;
        let e = y[0] - m;
        ll += -0.5 * (LN_2PI + s.ln() + e * e / s);
        let gain = p / s;
        m += gain * e;
        p *= 1.0 - gain;
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LotkaVolterra;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lg_data(model: &LinearGaussianDynamics, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = model.initial(&mut rng);
        let mut obs = Vec::new();
        for j in 0..n {
            if j > 0 {
                model.propagate(&mut x, 0.0, 1.0, &mut rng).unwrap();
            }
            obs.push(vec![x + model.r.sqrt() * rng.sample::<f64, _>(StandardNormal)]);
        }
        Dataset::new((0..n).map(|t| t as f64).collect(), obs).unwrap()
    }

    #[test]
    fn observation_at_known_start_is_exact() {
        let net = LotkaVolterra::default();
        let sigma = [8.0, 8.0];
        let x0 = [71.0, 79.0];
        let dynamics = MjpDynamics { net: &net, nu: &[1.0, 0.005, 0.6], x0: &x0, t0: 0.0, sigma: &sigma };
        let data = Dataset::new(vec![0.0], vec![vec![75.0, 70.0]]).unwrap();
        let want = gaussian_obs(&x0, &[75.0, 70.0], &sigma);
        for m in [1, 7, 100] {
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
            let got = bootstrap_pf_loglik(&dynamics, &data, &ParticleFilterConfig::new(m).unwrap(), &mut rng).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn estimates_are_unbiased_on_the_likelihood_scale() {
        let model = LinearGaussianDynamics { a: 0.8, q: 1.0, r: 0.5, m0: 0.0, p0: 1.0, t0: 0.0 };
        let data = lg_data(&model, 10, 1);
        let exact = kalman_loglik(&model, &data);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scheme in [Resampling::Multinomial, Resampling::Systematic] {
            let cfg = ParticleFilterConfig { particles: 20, resampling: scheme };
            let n = 4_000;
            let ratios: Vec<f64> = (0..n)
                .map(|_| (bootstrap_pf_loglik(&model, &data, &cfg, &mut rng).unwrap() - exact).exp())
                .collect();
            let mean = ratios.iter().sum::<f64>() / n as f64;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - 1.0).abs() < 3.0 * (var / n as f64).sqrt(), "{scheme:?}: {mean}");
        }
    }

    #[test]
    fn more_particles_less_variance() {
        let net = LotkaVolterra::default();
        let sigma = [8.0, 8.0];
        let x0 = [71.0, 79.0];
        let nu = [1.0, 0.005, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let times: Vec<f64> = (0..=10).map(f64::from).collect();
        let path = crate::models::gillespie_simulate(&net, &x0, &nu, 0.0, &times, &mut rng).unwrap();
        let data = crate::models::corrupt_observations(&times, &path, &sigma, &mut rng).unwrap();
        let dynamics = MjpDynamics { net: &net, nu: &nu, x0: &x0, t0: 0.0, sigma: &sigma };
        let var_for = |m: usize, rng: &mut ChaCha8Rng| {
            let cfg = ParticleFilterConfig::new(m).unwrap();
            let v: Vec<f64> = (0..40).map(|_| bootstrap_pf_loglik(&dynamics, &data, &cfg, rng).unwrap()).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let small = var_for(10, &mut rng);
        let large = var_for(200, &mut rng);
        assert!(large < small, "{large} vs {small}");
    }

    #[test]
    fn all_weights_vanishing_gives_zero_estimate() {
        struct Walled;
        impl ParticleDynamics for Walled {
            type State = f64;
            fn start_time(&self) -> f64 { 0.0 }
            fn initial<R: Rng + ?Sized>(&self, _: &mut R) -> f64 { 0.0 }
            fn propagate<R: Rng + ?Sized>(&self, s: &mut f64, _: f64, _: f64, rng: &mut R) -> Result<()> {
                *s += rng.random::<f64>();
                Ok(())
            }
            fn log_obs(&self, s: &f64, y: &[f64]) -> f64 {
                if *s < y[0] { 0.0 } else { f64::NEG_INFINITY }
            }
        }
        let data = Dataset::new(vec![0.0, 1.0], vec![vec![0.5], vec![-1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ll = bootstrap_pf_loglik(&Walled, &data, &ParticleFilterConfig::new(10).unwrap(), &mut rng).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
        // far-off but positive weights are kept in log space, not flushed to zero
        let model = LinearGaussianDynamics { a: 1.0, q: 1e-6, r: 1e-4, m0: 0.0, p0: 1e-6, t0: 0.0 };
        let far = Dataset::new(vec![0.0], vec![vec![100.0]]).unwrap();
        let ll = bootstrap_pf_loglik(&model, &far, &ParticleFilterConfig::new(10).unwrap(), &mut rng).unwrap();
        assert!(ll.is_finite() && ll < -1e7);
    }

    #[test]
    fn resampling_respects_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logw = [0.0, f64::NEG_INFINITY, 2f64.ln(), f64::NEG_INFINITY];
        let mut idx = Vec::new();
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            resample(&logw, Resampling::Multinomial, &mut idx, &mut rng);
            for &i in &idx {
                counts[i] += 1;
            }
        }
        assert_eq!(counts[1] + counts[3], 0);
        let frac = counts[2] as f64 / 80_000.0;
        assert!((frac - 2.0 / 3.0).abs() < 0.01, "{frac}");
    }
}
