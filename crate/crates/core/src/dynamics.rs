//! Time integration of the ring in deviation variables.
//!
//! The state is `(y_k, u_k)` with `x_k(t) = x_k(0) + V t + y_k(t)`. The full
//! model is integrated in exactly this form: force differences
//! `f(Delta + e) - f(Delta)` are evaluated without cancellation and the
//! (rounding-level) equilibrium residual is kept as a forcing term, so no
//! part of the perturbation expansion enters the integrated right-hand side.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumConfig;
use crate::error::{Error, Result};
use crate::expint::Step;
use crate::forcefield::ForceProfile;
use crate::params::SystemParams;
use crate::spectral::{mode_steps, Fourier};
use crate::trajectory::params_hash;
pub use crate::trajectory::{DeviationTrajectory, TimeGrid, Trajectory, TrajectoryMeta};

/// Gaps below this fraction of `L / N` abort the integration.
pub const GAP_COLLAPSE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Linear damped chain advanced exactly per mode, remainder by a
    /// two-stage exponential Runge-Kutta step.
    ExpSplit,
    /// Adaptive explicit Dormand-Prince 5(4).
    Dopri,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub integrator: Integrator,
    /// Keep every `sample_every`-th grid point; `0` picks about 1024 samples.
    pub sample_every: usize,
    /// Relative tolerance of the adaptive integrator.
    pub rtol: f64,
    /// Stability cap `h * omega_max` for the adaptive integrator.
    pub stiffness_cap: f64,
    /// Error floor of the adaptive integrator as a fraction of the forced
    /// response scale `g C0 t_damp^2 / M`.
    pub atol_fraction: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            integrator: Integrator::ExpSplit,
            sample_every: 0,
            rtol: 1e-10,
            stiffness_cap: 0.2,
            atol_fraction: 1e-3,
        }
    }
}

impl SimOptions {
    fn stride(&self, steps: usize) -> usize {
        if self.sample_every > 0 {
            self.sample_every
        } else {
            steps.div_ceil(1024).max(1)
        }
    }
}

/// `f(d + e) - f(d)` for `f(r) = alpha / r^2`.
#[inline]
pub(crate) fn force_diff(alpha: f64, d: f64, e: f64) -> f64 {
    let x = e / d;
    -alpha / (d * d) * x * (2.0 + x) / ((1.0 + x) * (1.0 + x))
}

/// Right-hand sides of the deviation system.
pub(crate) struct Deviation<'a> {
    p: &'a SystemParams,
    f: &'a ForceProfile,
    n: usize,
    delta: f64,
    gaps: &'a [f64],
    lab: Vec<f64>,
    residual: &'a [f64],
    deltas1: &'a [f64],
    /// `2 alpha Delta^-3`
    kcoef: f64,
}

impl<'a> Deviation<'a> {
    pub(crate) fn new(p: &'a SystemParams, eq: &'a EquilibriumConfig, f: &'a ForceProfile) -> Result<Self> {
        p.validate()?;
        if eq.len() != p.n {
            return Err(Error::Shape {
                expected: p.n,
                got: eq.len(),
            });
        }
        let delta = p.delta();
        Ok(Deviation {
            p,
            f,
            n: p.n,
            delta,
            gaps: &eq.gaps,
            lab: eq.lab_positions(),
            residual: &eq.residual,
            deltas1: &eq.deltas1,
            kcoef: 2.0 * p.alpha / delta.powi(3),
        })
    }

    #[inline]
    fn e(&self, y: &[f64], k: usize) -> f64 {
        y[(k + 1) % self.n] - y[k]
    }

    #[inline]
    fn lap(&self, y: &[f64], k: usize) -> f64 {
        let n = self.n;
        y[(k + 1) % n] - 2.0 * y[k] + y[(k + n - 1) % n]
    }

    /// `g phi_k(t)`.
    fn phi(&self, t: f64, k: usize) -> f64 {
        let x = self.lab[k];
        self.p.g * (self.f.value(x + self.p.v * t) - self.f.value(x))
    }

    /// Interaction, external force and equilibrium residual:
    /// `M y'' = interaction(y, t) - A u`.
    fn interaction(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let alpha = self.p.alpha;
        let mut prev = {
            let k = n - 1;
            force_diff(alpha, self.gaps[k], self.e(y, k))
        };
        for k in 0..n {
            let ek = self.e(y, k);
            if self.gaps[k] + ek < GAP_COLLAPSE * self.delta {
                return Err(Error::GapCollapse {
                    t,
                    k,
                    gap: self.gaps[k] + ek,
                    threshold: GAP_COLLAPSE * self.delta,
                });
            }
            let cur = force_diff(alpha, self.gaps[k], ek);
            let xs = self.lab[k] + self.p.v * t;
            let ext = self.phi(t, k) + self.p.g * self.f.diff(xs, y[k]);
            out[k] = prev - cur + ext + self.residual[k];
            prev = cur;
        }
        Ok(())
    }

    /// Everything except `-A u + 2 alpha Delta^-3 lap y`, from the direct force.
    fn remainder(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.interaction(t, y, out)?;
        for (k, o) in out.iter_mut().enumerate() {
            *o -= self.kcoef * self.lap(y, k);
        }
        Ok(())
    }

    /// `(L1, L2, L3)` at `(t, y)`.
    pub(crate) fn terms(&self, t: f64, y: &[f64]) -> Result<ResidualTerms> {
        let n = self.n;
        let alpha = self.p.alpha;
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        let mut l3 = vec![0.0; n];
        let g3 = |k: usize| -> Result<f64> {
            let d = self.gaps[k];
            let x = self.e(y, k) / d;
            if 1.0 + x <= 0.0 {
                return Err(Error::Consistency(format!("gap {k} closed at t = {t:e}")));
            }
            Ok(x * x * (3.0 + 2.0 * x) / ((1.0 + x) * (1.0 + x)) / (d * d))
        };
        let mut g_prev = g3(n - 1)?;
        let mut s_prev = self.deltas1[n - 1] * self.e(y, n - 1);
        for k in 0..n {
            let xs = self.lab[k] + self.p.v * t;
            l1[k] = self.p.g * self.f.diff(xs, y[k]);
            let s = self.deltas1[k] * self.e(y, k);
            l2[k] = self.kcoef * (s - s_prev);
            let gk = g3(k)?;
            l3[k] = alpha * (g_prev - gk);
            g_prev = gk;
            s_prev = s;
        }
        Ok(ResidualTerms { l1, l2, l3 })
    }
}

/// Perturbation terms of the deviation equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerms {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
}

impl ResidualTerms {
    pub fn total(&self) -> Vec<f64> {
        (0..self.l1.len()).map(|k| self.l1[k] + self.l2[k] + self.l3[k]).collect()
    }
}

/// `L1`, `L2` and the closed-form `L3` for a deviation field `y` at time `t`.
pub fn residual_terms(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    y: &[f64],
    t: f64,
) -> Result<ResidualTerms> {
    let sys = Deviation::new(p, eq, f)?;
    if y.len() != p.n {
        return Err(Error::Shape { expected: p.n, got: y.len() });
    }
    sys.terms(t, y)
}

/// `L3` from the power series `sum_{m>=2} d_m x^m`, `d_m = (-1)^m (m+1)`,
/// truncated after `terms` terms.
pub fn l3_series(p: &SystemParams, eq: &EquilibriumConfig, y: &[f64], terms: usize) -> Result<Vec<f64>> {
    let n = eq.len();
    if y.len() != n {
        return Err(Error::Shape { expected: n, got: y.len() });
    }
    let g = |k: usize| -> Result<f64> {
        let d = eq.gaps[k];
        let x = (y[(k + 1) % n] - y[k]) / d;
        if x.abs() >= 1.0 {
            return Err(Error::SeriesDomain { k, q: x });
        }
        let mut sum = 0.0;
        let mut pow = x * x;
        for m in 2..2 + terms {
            let dm = if m % 2 == 0 { (m + 1) as f64 } else { -((m + 1) as f64) };
            sum += dm * pow;
            pow *= x;
        }
        Ok(sum / (d * d))
    };
    let mut out = vec![0.0; n];
    let mut prev = g(n - 1)?;
    for (k, o) in out.iter_mut().enumerate() {
        let gk = g(k)?;
        *o = p.alpha * (prev - gk);
        prev = gk;
    }
    Ok(out)
}

/// Running extrema collected while integrating.
struct Monitor {
    delta: f64,
    window_exit: bool,
    max_u: f64,
    min_gap_ratio: f64,
}

impl Monitor {
    fn new(delta: f64) -> Self {
        Monitor {
            delta,
            window_exit: false,
            max_u: 0.0,
            min_gap_ratio: f64::INFINITY,
        }
    }

    fn observe(&mut self, sys: &Deviation, t: f64, y: &[f64], u: &[f64]) -> Result<()> {
        for k in 0..sys.n {
            let gap = sys.gaps[k] + sys.e(y, k);
            let ratio = gap / self.delta;
            if ratio < GAP_COLLAPSE || !ratio.is_finite() {
                return Err(Error::GapCollapse {
                    t,
                    k,
                    gap,
                    threshold: GAP_COLLAPSE * self.delta,
                });
            }
            self.min_gap_ratio = self.min_gap_ratio.min(ratio);
            let du = u[k].abs();
            self.max_u = self.max_u.max(du);
            if du > self.delta {
                self.window_exit = true;
            }
        }
        Ok(())
    }
}

struct Samples {
    times: Vec<f64>,
    y: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

impl Samples {
    fn new() -> Self {
        Samples {
            times: Vec::new(),
            y: Vec::new(),
            u: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, y: &[f64], u: &[f64]) {
        self.times.push(t);
        self.y.push(y.to_vec());
        self.u.push(u.to_vec());
    }

    fn into_deviations(self) -> DeviationTrajectory {
        DeviationTrajectory {
            times: self.times,
            y: self.y,
            u: self.u,
        }
    }
}

/// Integrates the full model over `[0, horizon]` on `steps` uniform steps.
pub fn simulate_full(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    simulate_full_with(p, eq, f, horizon, steps, &SimOptions::default())
}

pub fn simulate_full_with(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    horizon: f64,
    steps: usize,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let zero = vec![0.0; p.n];
    simulate_full_from(p, eq, f, horizon, steps, opts, &zero, &zero)
}

/// As [`simulate_full_with`] from initial deviations `y(0) = y0`, `u(0) = u0`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_full_from(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    horizon: f64,
    steps: usize,
    opts: &SimOptions,
    y0: &[f64],
    u0: &[f64],
) -> Result<Trajectory> {
    let grid = TimeGrid::new(horizon / steps.max(1) as f64, steps)?;
    let sys = Deviation::new(p, eq, f)?;
    for v in [y0, u0] {
        if v.len() != p.n {
            return Err(Error::Shape { expected: p.n, got: v.len() });
        }
    }
    let stride = opts.stride(steps);
    let mut mon = Monitor::new(sys.delta);
    let (samples, taken, last_h, name) = match opts.integrator {
        Integrator::ExpSplit => {
            let (s, taken) = run_exp_split(&sys, grid, stride, &mut mon, y0, u0)?;
            (s, taken, grid.dt, "exp-split-etd2")
        }
        Integrator::Dopri => {
            let rhs = |t: f64, y: &[f64], u: &[f64], out: &mut [f64]| -> Result<()> {
                sys.interaction(t, y, out)?;
                for k in 0..sys.n {
                    out[k] = (out[k] - p.a * u[k]) / p.m;
                }
                Ok(())
            };
            let (s, taken, h) = run_dopri(&sys, p, grid, stride, opts, &mut mon, rhs, y0, u0)?;
            (s, taken, h, "dopri5")
        }
    };
    let dev = samples.into_deviations();
    let positions = dev
        .times
        .iter()
        .zip(&dev.y)
        .map(|(t, y)| (0..p.n).map(|k| sys.lab[k] + p.v * t + y[k]).collect())
        .collect();
    let velocities = dev.u.iter().map(|u| u.iter().map(|v| p.v + v).collect()).collect();
    Ok(Trajectory {
        times: dev.times.clone(),
        positions,
        velocities,
        deviations: dev,
        meta: TrajectoryMeta {
            integrator: name.into(),
            step: last_h,
            steps_taken: taken,
            params_hash: params_hash(p),
            window_exit: mon.window_exit,
            max_velocity_deviation: mon.max_u,
            min_gap_ratio: mon.min_gap_ratio,
        },
    })
}

fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn run_exp_split(
    sys: &Deviation,
    grid: TimeGrid,
    stride: usize,
    mon: &mut Monitor,
    y0: &[f64],
    u0: &[f64],
) -> Result<(Samples, usize)> {
    let n = sys.n;
    let tr = Fourier::new(n);
    let steps: Vec<Step> = mode_steps(sys.p, grid.dt);
    let zero = Complex64::new(0.0, 0.0);
    let mut eta = tr.dft(y0)?;
    let mut vel = tr.dft(u0)?;
    let mut y = y0.to_vec();
    let mut u = u0.to_vec();
    let mut buf = vec![0.0; n];
    let mut pred = vec![zero; n];
    let mut samples = Samples::new();
    samples.push(0.0, &y, &u);
    mon.observe(sys, 0.0, &y, &u)?;
    for i in 0..grid.steps {
        let t = grid.time(i);
        let t1 = grid.time(i + 1);
        sys.remainder(t, &y, &mut buf)?;
        let q0 = tr.dft_complex(&to_complex(&buf))?;
        for m in 0..n {
            pred[m] = steps[m].apply(eta[m], vel[m], q0[m], q0[m]).0;
        }
        let (yp, _) = tr.idft_real(&pred)?;
        sys.remainder(t1, &yp, &mut buf)?;
        let q1 = tr.dft_complex(&to_complex(&buf))?;
        for m in 0..n {
            (eta[m], vel[m]) = steps[m].apply(eta[m], vel[m], q0[m], q1[m]);
        }
        y = tr.idft_real(&eta)?.0;
        u = tr.idft_real(&vel)?.0;
        mon.observe(sys, t1, &y, &u)?;
        if (i + 1) % stride == 0 || i + 1 == grid.steps {
            samples.push(t1, &y, &u);
        }
    }
    Ok((samples, grid.steps))
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive integration of `y' = u`, `u' = acc(t, y, u)`; lands exactly on
/// every grid point and samples every `stride`-th one.
#[allow(clippy::too_many_arguments)]
fn run_dopri<R>(
    sys: &Deviation,
    p: &SystemParams,
    grid: TimeGrid,
    stride: usize,
    opts: &SimOptions,
    mon: &mut Monitor,
    acc: R,
    y0: &[f64],
    u0: &[f64],
) -> Result<(Samples, usize, f64)>
where
    R: Fn(f64, &[f64], &[f64], &mut [f64]) -> Result<()>,
{
    let n = sys.n;
    let d = p.derived();
    let h_cap = (opts.stiffness_cap / d.omega_max.max(p.a / p.m)).min(grid.dt);
    let mut y = y0.to_vec();
    let mut u = u0.to_vec();
    // stage derivatives: ky = u-stage, ku = acceleration
    let mut ky = vec![vec![0.0; n]; 7];
    let mut ku = vec![vec![0.0; n]; 7];
    let mut ys = vec![0.0; n];
    let mut us = vec![0.0; n];
    let mut samples = Samples::new();
    samples.push(0.0, &y, &u);
    mon.observe(sys, 0.0, &y, &u)?;
    // Absolute floors: the response to forcing of size g C0 over a damping time.
    let y_ref = p.g * sys.f.constants().c0 * d.t_damp * d.t_damp / p.m;
    let u_ref = y_ref / d.t_damp;
    let mut t = 0.0;
    let mut h = h_cap;
    let mut taken = 0usize;
    ky[0].copy_from_slice(&u);
    acc(t, &y, &u, &mut ku[0])?;
    for i in 0..grid.steps {
        let target = grid.time(i + 1);
        while t < target {
            let last = target - t <= h * (1.0 + 1e-12);
            let hs = if last { target - t } else { h };
            for s in 1..7 {
                for k in 0..n {
                    let mut dy = 0.0;
                    let mut du = 0.0;
                    for j in 0..s {
                        dy += A[s][j] * ky[j][k];
                        du += A[s][j] * ku[j][k];
                    }
                    ys[k] = y[k] + hs * dy;
                    us[k] = u[k] + hs * du;
                }
                ky[s].copy_from_slice(&us);
                let (head, tail) = ku.split_at_mut(s);
                let _ = head;
                acc(t + C[s] * hs, &ys, &us, &mut tail[0])?;
            }
            // Blockwise-relative error norm.
            let ymax = y.iter().chain(&ys).fold(0.0f64, |m, v| m.max(v.abs()));
            let umax = u.iter().chain(&us).fold(0.0f64, |m, v| m.max(v.abs()));
            let sy = opts.rtol * ymax.max(opts.atol_fraction * y_ref).max(f64::MIN_POSITIVE);
            let su = opts.rtol * umax.max(opts.atol_fraction * u_ref).max(f64::MIN_POSITIVE);
            let mut err = 0.0f64;
            for k in 0..n {
                let mut ey = 0.0;
                let mut eu = 0.0;
                for s in 0..7 {
                    ey += E[s] * ky[s][k];
                    eu += E[s] * ku[s][k];
                }
                err = err.max((hs * ey).abs() / sy).max((hs * eu).abs() / su);
            }
            if err <= 1.0 || hs < 1e-14 * target.max(1e-300) {
                t = if last { target } else { t + hs };
                y.copy_from_slice(&ys);
                u.copy_from_slice(&us);
                let (head, tail) = ku.split_at_mut(6);
                head[0].copy_from_slice(&tail[0]);
                ky[0].copy_from_slice(&u);
                taken += 1;
                mon.observe(sys, t, &y, &u)?;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !(last && err <= 1.0) {
                h = (hs * factor).min(h_cap);
            }
            if h < 1e-15 * grid.horizon() {
                return Err(Error::StepUnderflow { t, h });
            }
        }
        if (i + 1) % stride == 0 || i + 1 == grid.steps {
            samples.push(target, &y, &u);
        }
    }
    Ok((samples, taken, h))
}

/// Integrates the cut-off linear system
/// `M y'' + A y' - 2 alpha Delta^-3 lap y = g phi_k(t)` with the adaptive
/// integrator, sampled on the uniform grid of `steps` intervals.
pub fn simulate_linear_cutoff(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    horizon: f64,
    steps: usize,
) -> Result<DeviationTrajectory> {
    simulate_linear_cutoff_with(
        p,
        eq,
        f,
        horizon,
        steps,
        &SimOptions {
            integrator: Integrator::Dopri,
            sample_every: 1,
            ..SimOptions::default()
        },
    )
}

pub fn simulate_linear_cutoff_with(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    horizon: f64,
    steps: usize,
    opts: &SimOptions,
) -> Result<DeviationTrajectory> {
    let grid = TimeGrid::new(horizon / steps.max(1) as f64, steps)?;
    let sys = Deviation::new(p, eq, f)?;
    simulate_linear_forced(&sys, p, grid, opts, |t, k| sys.phi(t, k))
}

/// Cut-off linear system with arbitrary forcing `q(t, k)`.
pub fn simulate_linear_forcing<Q>(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    grid: TimeGrid,
    opts: &SimOptions,
    q: Q,
) -> Result<DeviationTrajectory>
where
    Q: Fn(f64, usize) -> f64,
{
    let sys = Deviation::new(p, eq, f)?;
    simulate_linear_forced(&sys, p, grid, opts, q)
}

fn simulate_linear_forced<Q>(
    sys: &Deviation,
    p: &SystemParams,
    grid: TimeGrid,
    opts: &SimOptions,
    q: Q,
) -> Result<DeviationTrajectory>
where
    Q: Fn(f64, usize) -> f64,
{
    let stride = opts.stride(grid.steps);
    let mut mon = Monitor::new(sys.delta);
    let rhs = |t: f64, y: &[f64], u: &[f64], out: &mut [f64]| -> Result<()> {
        for k in 0..sys.n {
            out[k] = (q(t, k) - p.a * u[k] + sys.kcoef * sys.lap(y, k)) / p.m;
        }
        Ok(())
    };
    let zero = vec![0.0; sys.n];
    let (samples, _, _) = run_dopri(sys, p, grid, stride, opts, &mut mon, rhs, &zero, &zero)?;
    Ok(samples.into_deviations())
}

/// Defects of the deviation-equation identity along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `max |My'' + Ay' - 2 alpha Delta^-3 lap y - (L1 + L2 + L3 + g phi)|`
    /// with `My''` taken from the direct force law.
    pub algebraic_defect: f64,
    /// Same with `y''` and `y'` from central differences of the samples.
    pub fd_defect: f64,
    /// `max |M y''|` from the direct force law, the natural scale of both defects.
    pub scale: f64,
    pub samples_used: usize,
}

/// Checks the deviation equations along a sampled trajectory. With
/// `drop_terms` the perturbation terms are treated as zero, so the defect
/// measures what the cut-off system neglects.
pub fn consistency_identity(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    traj: &DeviationTrajectory,
    drop_terms: bool,
) -> Result<ConsistencyReport> {
    let sys = Deviation::new(p, eq, f)?;
    let n = p.n;
    let s = traj.times.len();
    let mut alg = 0.0f64;
    let mut fd = 0.0f64;
    let mut scale = 0.0f64;
    let mut force = vec![0.0; n];
    let uniform = s >= 3 && {
        let h = traj.times[1] - traj.times[0];
        traj.times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
    };
    for i in 0..s {
        let t = traj.times[i];
        let y = &traj.y[i];
        let u = &traj.u[i];
        sys.interaction(t, y, &mut force)?;
        let rhs_terms = if drop_terms {
            vec![0.0; n]
        } else {
            sys.terms(t, y)?.total()
        };
        for k in 0..n {
            let my2 = force[k] - p.a * u[k];
            scale = scale.max(my2.abs());
            let lin = p.a * u[k] - sys.kcoef * sys.lap(y, k);
            let rhs = rhs_terms[k] + sys.phi(t, k);
            alg = alg.max((my2 + lin - rhs).abs());
        }
        if uniform && i > 0 && i + 1 < s {
            let h = traj.times[1] - traj.times[0];
            let (ym, yp) = (&traj.y[i - 1], &traj.y[i + 1]);
            for k in 0..n {
                let y2 = (yp[k] - 2.0 * y[k] + ym[k]) / (h * h);
                let y1 = (yp[k] - ym[k]) / (2.0 * h);
                let lhs = p.m * y2 + p.a * y1 - sys.kcoef * sys.lap(y, k);
                let rhs = rhs_terms[k] + sys.phi(t, k);
                fd = fd.max((lhs - rhs).abs());
            }
        }
    }
    Ok(ConsistencyReport {
        algebraic_defect: alg,
        fd_defect: fd,
        scale,
        samples_used: s,
    })
}

/// Energy bookkeeping along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    /// Change of kinetic plus interaction energy over the run.
    pub energy_change: f64,
    /// Work of `g F` minus friction dissipation, by the trapezoidal rule.
    pub net_work: f64,
    pub defect: f64,
    /// `defect / max(|energy_change|, |net_work|)`.
    pub relative_defect: f64,
}

/// Compares `d/dt (kinetic + interaction)` with `sum_k v_k (g F(x_k) - a(v_k))`.
/// Everything is expressed relative to the rigid rotation to avoid
/// cancellation against the large constant parts.
pub fn energy_balance(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    traj: &DeviationTrajectory,
) -> Result<EnergyBalance> {
    let sys = Deviation::new(p, eq, f)?;
    let n = p.n;
    let energy = |y: &[f64], u: &[f64]| -> f64 {
        let mut e = 0.0;
        for k in 0..n {
            let d = sys.gaps[k];
            let ek = sys.e(y, k);
            e += p.m * (p.v * u[k] + 0.5 * u[k] * u[k]);
            e += -p.alpha * ek / (d * (d + ek));
        }
        e
    };
    // power relative to the constant V * (sum_k F-independent) part
    let w = eq.w;
    let power = |t: f64, y: &[f64], u: &[f64]| -> f64 {
        let mut s = 0.0;
        for k in 0..n {
            let xs = sys.lab[k] + p.v * t;
            let gf = p.g * (sys.f.value(xs) + sys.f.diff(xs, y[k]));
            // a(V + u) = w + A u
            s += (p.v + u[k]) * (gf - w - p.a * u[k]);
        }
        s
    };
    let s = traj.times.len();
    let e0 = energy(&traj.y[0], &traj.u[0]);
    let e1 = energy(&traj.y[s - 1], &traj.u[s - 1]);
    let mut work = 0.0;
    let mut prev = power(traj.times[0], &traj.y[0], &traj.u[0]);
    for i in 1..s {
        let cur = power(traj.times[i], &traj.y[i], &traj.u[i]);
        work += 0.5 * (traj.times[i] - traj.times[i - 1]) * (prev + cur);
        prev = cur;
    }
    let defect = (e1 - e0 - work).abs();
    let denom = (e1 - e0).abs().max(work.abs());
    Ok(EnergyBalance {
        energy_change: e1 - e0,
        net_work: work,
        defect,
        relative_defect: if denom > 0.0 { defect / denom } else { defect },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_diff_is_stable() {
        let (alpha, d) = (0.3, 0.02);
        for &e in &[1e-3, -5e-4, 1e-9, 1e-15] {
            let direct = alpha / ((d + e) * (d + e)) - alpha / (d * d);
            let stable = force_diff(alpha, d, e);
            let lin = -2.0 * alpha / d.powi(3) * e;
            assert!((stable - direct).abs() <= 1e-6 * direct.abs() || (stable / lin - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dopri_tableau_is_consistent() {
        for s in 1..7 {
            let row: f64 = A[s].iter().sum();
            assert!((row - C[s]).abs() < 1e-14, "row {s}");
        }
        let e: f64 = E.iter().sum();
        assert!(e.abs() < 1e-15);
    }

    fn free_ring(n: usize, alpha: f64) -> (SystemParams, EquilibriumConfig, ForceProfile) {
        let p = SystemParams {
            n,
            l: 1.0,
            m: 1.0,
            alpha,
            g: 0.0,
            a0: -1.0,
            a: 1.0,
            v: 1.0,
            rho: 0.01,
            beta: 0.01,
        };
        (p, EquilibriumConfig::uniform(n, 1.0, 0.0), ForceProfile::zero(1.0).unwrap())
    }

    #[test]
    fn rigid_rotation_stays_rigid() {
        let (p, eq, f) = free_ring(16, 1e-3);
        for integrator in [Integrator::ExpSplit, Integrator::Dopri] {
            let opts = SimOptions {
                integrator,
                ..SimOptions::default()
            };
            let tr = simulate_full_with(&p, &eq, &f, 1.0, 200, &opts).unwrap();
            assert!(tr.deviations.max_abs_y() <= 1e-10 * p.delta());
            let last = tr.positions.last().unwrap();
            assert!((last[3] - (3.0 / 16.0 + 1.0)).abs() < 1e-12, "unwrapped");
            assert!(!tr.meta.window_exit);
        }
    }

    #[test]
    fn uniform_velocity_kick_relaxes_exponentially() {
        let (p, eq, f) = free_ring(3, 1e-9);
        let u0 = vec![0.1; 3];
        for integrator in [Integrator::ExpSplit, Integrator::Dopri] {
            let opts = SimOptions {
                integrator,
                sample_every: 1,
                ..SimOptions::default()
            };
            let tr = simulate_full_from(&p, &eq, &f, 3.0, 300, &opts, &[0.0; 3], &u0).unwrap();
            for (t, u) in tr.deviations.times.iter().zip(&tr.deviations.u) {
                let want = 0.1 * (-t).exp();
                for v in u {
                    assert!((v - want).abs() <= 1e-8 * want, "{integrator:?} t={t}: {v} vs {want}");
                }
            }
        }
    }

    #[test]
    fn residual_terms_basic_cases() {
        let p = crate::params::DESK_EXPONENTS
            .instantiate(32, crate::params::DEFAULT_RHO, 1.0)
            .unwrap();
        let f = ForceProfile::canonical(1.0);
        let eq = crate::equilibrium::solve(&p, &f).unwrap();
        let p = p.calibrate_friction(eq.w);
        let zero = residual_terms(&p, &eq, &f, &[0.0; 32], 0.3).unwrap();
        assert!(zero.total().iter().all(|v| *v == 0.0));
        let c = 1e-4;
        let shift = residual_terms(&p, &eq, &f, &[c; 32], 0.3).unwrap();
        for k in 0..32 {
            assert_eq!(shift.l2[k], 0.0);
            assert_eq!(shift.l3[k], 0.0);
            let x = eq.lab_position(k) + 0.3;
            let want = p.g * (f.value(x + c) - f.value(x));
            assert!((shift.l1[k] - want).abs() <= 1e-9 * want.abs() + 1e-30);
        }
    }

    #[test]
    fn l3_closed_form_matches_series() {
        let p = crate::params::DESK_EXPONENTS
            .instantiate(32, crate::params::DEFAULT_RHO, 1.0)
            .unwrap();
        let f = ForceProfile::canonical(1.0);
        let eq = crate::equilibrium::solve(&p, &f).unwrap();
        let y: Vec<f64> = (0..32).map(|k| 0.04 * p.delta() * ((k * k) as f64 * 0.37).sin()).collect();
        let closed = residual_terms(&p, &eq, &f, &y, 0.0).unwrap().l3;
        let series = l3_series(&p, &eq, &y, 30).unwrap();
        let scale = closed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in closed.iter().zip(&series) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
        let big: Vec<f64> = (0..32).map(|k| if k == 5 { 1.5 * p.delta() } else { 0.0 }).collect();
        assert!(matches!(l3_series(&p, &eq, &big, 30), Err(Error::SeriesDomain { .. })));
    }

    #[test]
    fn gap_collapse_aborts() {
        let (p, eq, f) = free_ring(8, 1e-12);
        let mut u0 = vec![0.0; 8];
        u0[0] = 10.0;
        let opts = SimOptions {
            integrator: Integrator::Dopri,
            ..SimOptions::default()
        };
        let err = simulate_full_from(&p, &eq, &f, 1.0, 100, &opts, &[0.0; 8], &u0).unwrap_err();
        assert!(matches!(err, Error::GapCollapse { k: 0, .. }), "{err:?}");
    }
}
