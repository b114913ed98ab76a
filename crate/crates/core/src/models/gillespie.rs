use rand::Rng;
use rand_distr::Exp1;

use super::ReactionNetwork;
use crate::error::{invalid, Result};

/// Advances `x` exactly from `t_from` to `t_to`. Returns the number of
/// reaction events. A state with zero total hazard stays put.
pub fn gillespie_advance<N, R>(
    net: &N,
    x: &mut [f64],
    nu: &[f64],
    t_from: f64,
    t_to: f64,
    rng: &mut R,
) -> Result<u64>
where
    N: ReactionNetwork + ?Sized,
    R: Rng + ?Sized,
{
    net.check_state(x)?;
    let s = net.stoichiometry();
    let r = net.reactions();
    let mut h = vec![0.0; r];
    let mut t = t_from;
    let mut events = 0u64;
    loop {
        net.hazards_unchecked(x, nu, &mut h);
        let total: f64 = h.iter().sum();
        if !(total > 0.0) {
            if total.is_nan() {
                return Err(invalid("hazards are NaN"));
            }
            return Ok(events);
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        t += wait;
        if t > t_to {
            return Ok(events);
        }
        let mut u = rng.random::<f64>() * total;
        let mut j = 0;
        while j + 1 < r && u >= h[j] {
            u -= h[j];
            j += 1;
        }
        // guard against rounding landing on a zero-hazard tail
        while h[j] == 0.0 && j > 0 {
            j -= 1;
        }
        for (xi, sij) in x.iter_mut().zip(s.column(j).iter()) {
            *xi += sij;
        }
        events += 1;
    }
}

/// Exact simulation of one path from `x0` at `t0`, returning the state at
/// each of the increasing `record_times`.
pub fn gillespie_simulate<N, R>(
    net: &N,
    x0: &[f64],
    nu: &[f64],
    t0: f64,
    record_times: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    N: ReactionNetwork + ?Sized,
    R: Rng + ?Sized,
{
    if record_times.windows(2).any(|w| w[1] < w[0]) || record_times.first().is_some_and(|&t| t < t0) {
        return Err(invalid("record times must be non-decreasing and not before t0"));
    }
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut out = Vec::with_capacity(record_times.len());
    for &tr in record_times {
        gillespie_advance(net, &mut x, nu, t, tr, rng)?;
        t = tr;
        out.push(x.clone());
    }
    Ok(out)
}
