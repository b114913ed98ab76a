use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, ReactionNetwork};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_jittered, gaussian_log_density, symmetrize};

/// Mean `z` and covariance `V` of the linear noise approximation. The
/// residual mean is identically zero under the restarting filter and is not
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct LnaState {
    pub z: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl LnaState {
    pub fn new(z: DVector<f64>, v: DMatrix<f64>) -> Self {
        Self { z, v }
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = self.z.as_slice().to_vec();
        y.extend_from_slice(self.v.as_slice());
        y
    }

    fn unpack(p: usize, y: &[f64]) -> Self {
        Self {
            z: DVector::from_column_slice(&y[..p]),
            v: DMatrix::from_column_slice(p, p, &y[p..p + p * p]),
        }
    }
}

/// Scratch space for allocation-free right-hand-side evaluations.
struct Workspace {
    p: usize,
    r: usize,
    s: Vec<f64>,
    h: Vec<f64>,
    jac: DMatrix<f64>,
    f: Vec<f64>,
}

impl Workspace {
    fn new<N: ReactionNetwork + ?Sized>(net: &N) -> Self {
        let (p, r) = (net.species(), net.reactions());
        Self {
            p,
            r,
            s: net.stoichiometry().as_slice().to_vec(),
            h: vec![0.0; r],
            jac: DMatrix::zeros(r, p),
            f: vec![0.0; p * p],
        }
    }

    /// `y = [z, vec(V)]` in column-major order.
    fn rhs<N: ReactionNetwork + ?Sized>(&mut self, net: &N, nu: &[f64], y: &[f64], dy: &mut [f64]) {
        let (p, r) = (self.p, self.r);
        let z = &y[..p];
        let v = &y[p..];
        net.hazards_unchecked(z, nu, &mut self.h);
        net.hazard_jacobian(z, nu, &mut self.jac);
        let s = |i: usize, j: usize| self.s[i + j * p];
        for i in 0..p {
            dy[i] = (0..r).map(|j| s(i, j) * self.h[j]).sum();
        }
        // F = S dh/dx
        for c in 0..p {
            for i in 0..p {
                self.f[i + c * p] = (0..r).map(|j| s(i, j) * self.jac[(j, c)]).sum();
            }
        }
        for c in 0..p {
            for i in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    // (F V)_{ic} + (V F^T)_{ic}
                    acc += self.f[i + k * p] * v[k + c * p] + v[i + k * p] * self.f[c + k * p];
                }
                for j in 0..r {
                    acc += s(i, j) * self.h[j] * s(c, j);
                }
                dy[p + i + c * p] = acc;
            }
        }
    }
}

/// Time derivatives `(S h(z), V F^T + S diag(h) S^T + F V)` with `F` the
/// Jacobian of `S h` at `z`.
pub fn lna_ode_rhs<N: ReactionNetwork + ?Sized>(net: &N, nu: &[f64], state: &LnaState) -> LnaState {
    let mut ws = Workspace::new(net);
    let y = state.pack();
    let mut dy = vec![0.0; y.len()];
    ws.rhs(net, nu, &y, &mut dy);
    LnaState::unpack(net.species(), &dy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RkfOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// First trial step; defaults to a tenth of the interval.
    pub initial_step: Option<f64>,
}

impl Default for RkfOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 100_000,
            initial_step: None,
        }
    }
}

const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B5: [f64; 6] = [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];

struct StepScratch {
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
}

impl StepScratch {
    fn new(n: usize) -> Self {
        Self {
            k: vec![vec![0.0; n]; 6],
            stage: vec![0.0; n],
        }
    }

    /// One Fehlberg step of size `h`: the fifth-order update goes to `y5`,
    /// the difference between the fifth- and fourth-order updates to `err`.
    fn step<F>(&mut self, f: &mut F, t: f64, h: f64, y: &[f64], y5: &mut [f64], err: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        for s in 0..6 {
            for i in 0..n {
                self.stage[i] = y[i] + h * (0..s).map(|j| A[s][j] * self.k[j][i]).sum::<f64>();
            }
            let (_, rest) = self.k.split_at_mut(s);
            f(t + C[s] * h, &self.stage, &mut rest[0]);
        }
        for i in 0..n {
            let mut hi5 = 0.0;
            let mut hi4 = 0.0;
            for s in 0..6 {
                hi5 += B5[s] * self.k[s][i];
                hi4 += B4[s] * self.k[s][i];
            }
            y5[i] = y[i] + h * hi5;
            err[i] = h * (hi5 - hi4);
        }
    }
}

/// Advances with `steps` equal Fehlberg steps and no error control.
pub fn rkf45_fixed<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if steps == 0 || !(t1 >= t0) {
        return Err(invalid("need a forward interval and at least one step"));
    }
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut ws = StepScratch::new(n);
    let mut y = y0.to_vec();
    let mut next = vec![0.0; n];
    let mut err = vec![0.0; n];
    for j in 0..steps {
        ws.step(&mut f, t0 + j as f64 * h, h, &y, &mut next, &mut err);
        std::mem::swap(&mut y, &mut next);
    }
    Ok(y)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` with the Runge-Kutta-Fehlberg
/// 4(5) pair, advancing with the fifth-order solution. Returns the state at
/// `t1` and the last accepted untruncated step size, a good first step for
/// a following interval.
pub fn rkf45_integrate<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, opts: &RkfOptions) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t1 >= t0) {
        return Err(invalid(format!("integration interval [{t0}, {t1}] is reversed")));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(invalid("tolerances must be positive"));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((y, opts.initial_step.unwrap_or(0.0)));
    }
    let min_step = 1e-12 * span;
    let mut h = opts.initial_step.unwrap_or(span / 10.0).min(span);
    let mut t = t0;
    let mut ws = StepScratch::new(n);
    let mut y5 = vec![0.0; n];
    let mut err_v = vec![0.0; n];
    let mut last_h = h;
    let mut steps = 0usize;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::Integration(format!("exceeded {} steps at t = {t}", opts.max_steps)));
        }
        steps += 1;
        let final_step = t + h >= t1;
        if final_step {
            h = t1 - t;
        }
        ws.step(&mut f, t, h, &y, &mut y5, &mut err_v);
        let mut err = 0.0f64;
        for i in 0..n {
            let scale = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = err_v[i].abs() / scale;
            err = if e.is_nan() { f64::INFINITY } else { err.max(e) };
        }
        if err <= 1.0 {
            t = if final_step { t1 } else { t + h };
            std::mem::swap(&mut y, &mut y5);
            if !final_step || steps == 1 {
                last_h = h;
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else if err.is_finite() {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            0.2
        };
        h *= factor;
        if h < min_step && t < t1 {
            return Err(Error::Integration(format!("step size underflow at t = {t}")));
        }
    }
    Ok((y, last_h))
}

fn integrate_lna<N: ReactionNetwork + ?Sized>(
    net: &N,
    nu: &[f64],
    ws: &mut Workspace,
    state: &[f64],
    t0: f64,
    t1: f64,
    opts: &RkfOptions,
) -> Result<(Vec<f64>, f64)> {
    let out = rkf45_integrate(|_, y, dy| ws.rhs(net, nu, y, dy), state, t0, t1, opts)?;
    if out.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration("LNA solution is not finite".into()));
    }
    Ok(out)
}

/// Log marginal likelihood of the data under the linear noise
/// approximation, started from the known state `x0` at the first
/// observation time, with independent Gaussian observation noise of
/// standard deviations `sigma`.
pub fn lna_marginal_loglik<N: ReactionNetwork + ?Sized>(
    net: &N,
    nu: &[f64],
    sigma: &[f64],
    data: &Dataset,
    x0: &[f64],
    opts: &RkfOptions,
) -> Result<f64> {
    let p = net.species();
    if x0.len() != p || sigma.len() != p || data.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if x0.len() != p { x0.len() } else if sigma.len() != p { sigma.len() } else { data.dim() },
        });
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("observation standard deviations must be positive"));
    }
    let noise = DMatrix::from_diagonal(&DVector::from_iterator(p, sigma.iter().map(|s| s * s)));
    let mut a = DVector::from_column_slice(x0);
    let mut ll = gaussian_log_density(&DVector::from_column_slice(&data.obs[0]), &a, &noise)
        .ok_or_else(|| Error::SingularCovariance("observation noise".into()))?;
    let mut c = DMatrix::zeros(p, p);
    let mut ws = Workspace::new(net);
    let mut step_hint = None;
    for j in 1..data.len() {
        let state = LnaState::new(a.clone(), c.clone()).pack();
        let local = RkfOptions {
            initial_step: step_hint.or(opts.initial_step),
            ..*opts
        };
        let (y, h) = integrate_lna(net, nu, &mut ws, &state, data.times[j - 1], data.times[j], &local)?;
        step_hint = Some(h);
        let LnaState { z, mut v } = LnaState::unpack(p, &y);
        symmetrize(&mut v);
        let s = &v + &noise;
        let Some(chol) = cholesky_jittered(&s) else {
            log::warn!("forecast covariance is not positive definite; scoring zero likelihood");
            return Ok(f64::NEG_INFINITY);
        };
        let yj = DVector::from_column_slice(&data.obs[j]);
        let resid = &yj - &z;
        let l = chol.l();
        let w = l
            .solve_lower_triangular(&resid)
            .ok_or_else(|| Error::SingularCovariance("forecast covariance".into()))?;
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        ll += -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + w.norm_squared());
        // V S^{-1} = (S^{-1} V)^T since both are symmetric
        let gain = chol.solve(&v).transpose();
        a = &z + &gain * resid;
        c = &v - &gain * &v;
        symmetrize(&mut c);
    }
    Ok(ll)
}

/// Draws a path from the linear noise approximation: from each recorded
/// state the approximation is restarted with zero covariance and the next
/// state is drawn from `N(z, V)`.
pub fn lna_simulate<N, R>(
    net: &N,
    nu: &[f64],
    x0: &[f64],
    times: &[f64],
    opts: &RkfOptions,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    N: ReactionNetwork + ?Sized,
    R: Rng + ?Sized,
{
    let p = net.species();
    if x0.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x0.len() });
    }
    let mut ws = Workspace::new(net);
    let mut out = vec![x0.to_vec()];
    for w in times.windows(2) {
        let prev = out.last().unwrap();
        let state = LnaState::new(DVector::from_column_slice(prev), DMatrix::zeros(p, p)).pack();
        let (y, _) = integrate_lna(net, nu, &mut ws, &state, w[0], w[1], opts)?;
        let LnaState { z, mut v } = LnaState::unpack(p, &y);
        symmetrize(&mut v);
        let eig = SymmetricEigen::new(v);
        let root = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
        let noise = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &z + &eig.eigenvectors * root.component_mul(&noise);
        out.push(x.as_slice().to_vec());
    }
    Ok(out)
}
