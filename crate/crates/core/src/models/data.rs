use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Observation times and the observed vectors at each time.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, obs: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != obs.len() || times.is_empty() {
            return Err(invalid("dataset needs one observation per time and at least one time"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("observation times must be strictly increasing"));
        }
        let p = obs[0].len();
        if p == 0 || obs.iter().any(|y| y.len() != p) {
            return Err(invalid("observations must share one non-zero dimension"));
        }
        Ok(Self { times, obs })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.obs[0].len()
    }

    /// The first `n` observations.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!("cannot keep {n} of {} observations", self.len())));
        }
        Self::new(self.times[..n].to_vec(), self.obs[..n].to_vec())
    }

    /// CSV with header `t,y_1..y_p`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let ys: Vec<String> = (1..=self.dim()).map(|i| format!("y_{i}")).collect();
        writeln!(out, "t,{}", ys.join(","))?;
        for (t, y) in self.times.iter().zip(&self.obs) {
            let row: Vec<String> = y.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{t:?},{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut times = Vec::new();
        let mut obs = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("dataset line {}: {e}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() < 2 {
                return Err(Error::Parse(format!("dataset line {}: need t and y", n + 1)));
            }
            times.push(vals[0]);
            obs.push(vals[1..].to_vec());
        }
        Self::new(times, obs).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Adds independent `N(0, sigma_i^2)` noise to each component of each state.
pub fn corrupt_observations<R: Rng + ?Sized>(
    times: &[f64],
    states: &[Vec<f64>],
    sigma: &[f64],
    rng: &mut R,
) -> Result<Dataset> {
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("observation standard deviations must be non-negative"));
    }
    let obs = states
        .iter()
        .map(|x| {
            if x.len() != sigma.len() {
                return Err(Error::DimensionMismatch {
                    expected: sigma.len(),
                    got: x.len(),
                });
            }
            Ok(x.iter()
                .zip(sigma)
                .map(|(xi, s)| xi + s * rng.sample::<f64, _>(StandardNormal))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Dataset::new(times.to_vec(), obs)
}
