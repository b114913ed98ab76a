//! Stochastic kinetic models: reaction networks, exact simulation, the
//! bootstrap particle filter, the linear noise approximation and the two
//! benchmark posteriors.

mod data;
mod gillespie;
mod lna;
mod pf;
mod posterior;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

pub use data::{corrupt_observations, Dataset};
pub use gillespie::{gillespie_advance, gillespie_simulate};
pub use lna::{
    lna_marginal_loglik, lna_ode_rhs, lna_simulate, rkf45_fixed, rkf45_integrate, LnaState, RkfOptions,
};
pub use pf::{
    bootstrap_pf_loglik, kalman_loglik, LinearGaussianDynamics, MjpDynamics, ParticleDynamics,
    ParticleFilterConfig, Resampling,
};
pub use posterior::{
    ar_dataset, ar_true_theta, lv_dataset, lv_true_theta, AutoregulatoryPosterior,
    LotkaVolterraPosterior, AR_FIXED_NU1, AR_FIXED_NU5, AR_K, AR_NU, AR_SIGMA, AR_X0, LV_NU,
    LV_SIGMA, LV_X0,
};

/// A network of `r` reactions between `p` species with net effects given by
/// the columns of a `p x r` stoichiometry matrix.
pub trait ReactionNetwork {
    fn species(&self) -> usize;

    fn reactions(&self) -> usize;

    fn stoichiometry(&self) -> &DMatrix<f64>;

    fn rate_count(&self) -> usize {
        self.reactions()
    }

    /// Hazards at a (possibly non-integer) state, without domain checks.
    fn hazards_unchecked(&self, x: &[f64], nu: &[f64], out: &mut [f64]);

    /// Checks a state lies in the hazard domain.
    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.species() {
            return Err(Error::DimensionMismatch {
                expected: self.species(),
                got: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidState(format!("negative or NaN count {v}")));
        }
        Ok(())
    }

    /// `r x p` matrix of partial derivatives of the hazards.
    fn hazard_jacobian(&self, x: &[f64], nu: &[f64], out: &mut DMatrix<f64>);

    fn hazards(&self, x: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        if nu.len() != self.rate_count() {
            return Err(Error::DimensionMismatch {
                expected: self.rate_count(),
                got: nu.len(),
            });
        }
        let mut out = vec![0.0; self.reactions()];
        self.hazards_unchecked(x, nu, &mut out);
        Ok(out)
    }
}

fn stoich(p: usize, columns: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(p, columns.len(), |i, j| columns[j][i])
}

/// Predator-prey: prey birth, predation, predator death.
#[derive(Clone, Debug)]
pub struct LotkaVolterra {
    s: DMatrix<f64>,
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        Self {
            s: stoich(2, &[&[1.0, 0.0], &[-1.0, 1.0], &[0.0, -1.0]]),
        }
    }
}

impl ReactionNetwork for LotkaVolterra {
    fn species(&self) -> usize {
        2
    }
    fn reactions(&self) -> usize {
        3
    }
    fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.s
    }
    fn hazards_unchecked(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        out[0] = nu[0] * x[0];
        out[1] = nu[1] * x[0] * x[1];
        out[2] = nu[2] * x[1];
    }
    fn hazard_jacobian(&self, x: &[f64], nu: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 0)] = nu[0];
        out[(1, 0)] = nu[1] * x[1];
        out[(1, 1)] = nu[1] * x[0];
        out[(2, 1)] = nu[2];
    }
}

/// Lotka-Volterra hazards `(nu1 X1, nu2 X1 X2, nu3 X2)`.
pub fn lv_hazards(x: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    LotkaVolterra::default().hazards(x, nu)
}

/// Prokaryotic autoregulation with species (DNA, RNA, P, P2) and a
/// conserved total `K` of free and bound DNA.
#[derive(Clone, Debug)]
pub struct Autoregulatory {
    s: DMatrix<f64>,
    k: f64,
}

impl Autoregulatory {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(invalid(format!("conserved DNA total must be positive, got {k}")));
        }
        let s = stoich(
            4,
            &[
                &[-1.0, 0.0, 0.0, -1.0],
                &[1.0, 0.0, 0.0, 1.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
                &[0.0, 0.0, -2.0, 1.0],
                &[0.0, 0.0, 2.0, -1.0],
                &[0.0, -1.0, 0.0, 0.0],
                &[0.0, 0.0, -1.0, 0.0],
            ],
        );
        Ok(Self { s, k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

impl ReactionNetwork for Autoregulatory {
    fn species(&self) -> usize {
        4
    }
    fn reactions(&self) -> usize {
        8
    }
    fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.s
    }
    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: x.len() });
        }
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidState(format!("negative or NaN count {v}")));
        }
        if x[0] > self.k {
            return Err(Error::InvalidState(format!(
                "free DNA {} exceeds the conserved total {}",
                x[0], self.k
            )));
        }
        Ok(())
    }
    fn hazards_unchecked(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        out[0] = nu[0] * x[0] * x[3];
        out[1] = nu[1] * (self.k - x[0]);
        out[2] = nu[2] * x[0];
        out[3] = nu[3] * x[1];
        out[4] = nu[4] * x[2] * (x[2] - 1.0) / 2.0;
        out[5] = nu[5] * x[3];
        out[6] = nu[6] * x[1];
        out[7] = nu[7] * x[2];
    }
    fn hazard_jacobian(&self, x: &[f64], nu: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 0)] = nu[0] * x[3];
        out[(0, 3)] = nu[0] * x[0];
        out[(1, 0)] = -nu[1];
        out[(2, 0)] = nu[2];
        out[(3, 1)] = nu[3];
        out[(4, 2)] = nu[4] * (2.0 * x[2] - 1.0) / 2.0;
        out[(5, 3)] = nu[5];
        out[(6, 1)] = nu[6];
        out[(7, 2)] = nu[7];
    }
}

/// Autoregulatory hazards for rates `nu1..nu8` and DNA total `k`.
pub fn ar_hazards(x: &[f64], nu: &[f64], k: f64) -> Result<Vec<f64>> {
    Autoregulatory::new(k)?.hazards(x, nu)
}

/// Linear birth-death: `X -> 2X` at rate `nu1 X`, `X -> 0` at rate `nu2 X`.
#[derive(Clone, Debug)]
pub struct BirthDeath {
    s: DMatrix<f64>,
}

impl Default for BirthDeath {
    fn default() -> Self {
        Self {
            s: stoich(1, &[&[1.0], &[-1.0]]),
        }
    }
}

impl ReactionNetwork for BirthDeath {
    fn species(&self) -> usize {
        1
    }
    fn reactions(&self) -> usize {
        2
    }
    fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.s
    }
    fn hazards_unchecked(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        out[0] = nu[0] * x[0];
        out[1] = nu[1] * x[0];
    }
    fn hazard_jacobian(&self, _x: &[f64], nu: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = nu[0];
        out[(1, 0)] = nu[1];
    }
}

/// Immigration `0 -> X` at constant rate `nu1`.
#[derive(Clone, Debug)]
pub struct Immigration {
    s: DMatrix<f64>,
}

impl Default for Immigration {
    fn default() -> Self {
        Self {
            s: stoich(1, &[&[1.0]]),
        }
    }
}

impl ReactionNetwork for Immigration {
    fn species(&self) -> usize {
        1
    }
    fn reactions(&self) -> usize {
        1
    }
    fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.s
    }
    fn hazards_unchecked(&self, _x: &[f64], nu: &[f64], out: &mut [f64]) {
        out[0] = nu[0];
    }
    fn hazard_jacobian(&self, _x: &[f64], _nu: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
    }
}

/// Half-width of the uniform prior on every log-parameter.
pub const PRIOR_BOUND: f64 = 8.0;

/// Independent `U(-8, 8)` priors on the log-parameters; the interval is
/// open, so a component at exactly 8 has zero density.
pub fn log_prior(theta: &[f64]) -> f64 {
    if theta.iter().all(|t| t.abs() < PRIOR_BOUND) {
        -(theta.len() as f64) * (2.0 * PRIOR_BOUND).ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn lotka_volterra_hazards() {
        let h = lv_hazards(&[71.0, 79.0], &[1.0, 0.005, 0.6]).unwrap();
        assert!(close(&h, &[71.0, 28.045, 47.4]), "{h:?}");
        assert_eq!(lv_hazards(&[0.0, 0.0], &[1.0, 0.005, 0.6]).unwrap(), vec![0.0; 3]);
        assert_eq!(lv_hazards(&[3.0, 4.0], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(lv_hazards(&[-1.0, 4.0], &[1.0; 3]).is_err());
    }

    #[test]
    fn autoregulatory_hazards() {
        let nu = [0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1];
        let h = ar_hazards(&[5.0, 8.0, 8.0, 8.0], &nu, 10.0).unwrap();
        assert!(close(&h, &[4.0, 3.5, 1.75, 1.6, 2.8, 7.2, 2.4, 0.8]), "{h:?}");
        assert_eq!(ar_hazards(&[5.0, 8.0, 1.0, 8.0], &nu, 10.0).unwrap()[4], 0.0);
        assert_eq!(ar_hazards(&[10.0, 8.0, 1.0, 8.0], &nu, 10.0).unwrap()[1], 0.0);
        assert!(ar_hazards(&[11.0, 8.0, 1.0, 8.0], &nu, 10.0).is_err());
    }

    #[test]
    fn stoichiometry_matches_reaction_table() {
        let lv = LotkaVolterra::default();
        let s = lv.stoichiometry();
        assert_eq!(s.column(1).as_slice(), &[-1.0, 1.0]);
        assert_eq!(s.column(0).as_slice(), &[1.0, 0.0]);
        assert_eq!(s.column(2).as_slice(), &[0.0, -1.0]);

        let ar = Autoregulatory::new(10.0).unwrap();
        let s = ar.stoichiometry();
        // DNA + P2 -> DNA.P2 consumes one free DNA and one dimer
        assert_eq!(s.column(0).as_slice(), &[-1.0, 0.0, 0.0, -1.0]);
        assert_eq!(s.column(1).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.column(4).as_slice(), &[0.0, 0.0, -2.0, 1.0]);
        assert_eq!(s.column(5).as_slice(), &[0.0, 0.0, 2.0, -1.0]);
        // transcription and translation leave their templates in place
        assert_eq!(s.column(2).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.column(3).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.column(6).as_slice(), &[0.0, -1.0, 0.0, 0.0]);
        assert_eq!(s.column(7).as_slice(), &[0.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let nets: Vec<(Box<dyn ReactionNetwork>, Vec<f64>, Vec<f64>)> = vec![
            (Box::new(LotkaVolterra::default()), vec![71.3, 79.1], vec![1.0, 0.005, 0.6]),
            (
                Box::new(Autoregulatory::new(10.0).unwrap()),
                vec![5.2, 8.1, 7.7, 8.4],
                vec![0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1],
            ),
            (Box::new(BirthDeath::default()), vec![4.0], vec![0.3, 0.5]),
        ];
        for (net, x, nu) in nets {
            let (p, r) = (net.species(), net.reactions());
            let mut jac = DMatrix::zeros(r, p);
            net.hazard_jacobian(&x, &nu, &mut jac);
            for j in 0..p {
                let h = 1e-6;
                let mut up = x.clone();
                let mut dn = x.clone();
                up[j] += h;
                dn[j] -= h;
                let mut hu = vec![0.0; r];
                let mut hd = vec![0.0; r];
                net.hazards_unchecked(&up, &nu, &mut hu);
                net.hazards_unchecked(&dn, &nu, &mut hd);
                for i in 0..r {
                    let fd = (hu[i] - hd[i]) / (2.0 * h);
                    assert!((fd - jac[(i, j)]).abs() < 1e-6, "reaction {i} species {j}");
                }
            }
        }
    }

    #[test]
    fn uniform_prior() {
        let d = 5;
        assert!((log_prior(&vec![0.0; d]) + d as f64 * 16f64.ln()).abs() < 1e-15);
        assert_eq!(log_prior(&[0.0, 8.5]), f64::NEG_INFINITY);
        assert_eq!(log_prior(&[8.0, 0.0]), f64::NEG_INFINITY);
        assert_eq!(log_prior(&[-8.0, 0.0]), f64::NEG_INFINITY);
        assert!(log_prior(&[7.999, -7.999]).is_finite());
    }
}
