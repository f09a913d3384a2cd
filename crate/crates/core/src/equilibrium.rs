//! Static configuration with equal effective force on every particle.
//!
//! Positions are parameterized as `x_k = s + k Delta + Delta * zeta_k` with
//! `Delta = L / N` and `zeta_0 = 0`. For a fixed offset `s` the equations of
//! particles `1..N-1` form a tridiagonal system in `zeta_1..zeta_{N-1}`; the
//! remaining equation (particle 0) holds automatically once the discrete mean
//! `(g/N) sum F(x_i)` equals `w`, which is enforced by a one-dimensional root
//! search over `s`.
//!
//! All residuals are evaluated in relative-gap form. At the scalings of the
//! asymptotic regime `g Delta^2 / alpha` is around `1e-14`, far below the
//! resolution of absolute positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcefield::ForceProfile;
use crate::params::{SystemParams, DEFAULT_C_ALPHA_G_BOUND};

/// Lemma-1 configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    /// Ring length.
    #[serde(rename = "L")]
    pub ring: f64,
    /// Lab-frame position of particle 0; `x0` is measured from here.
    pub offset: f64,
    /// Positions relative to particle 0, so `x0[0] = 0`.
    pub x0: Vec<f64>,
    /// `(x_k - s - k Delta) / Delta` with `Delta = L / N`.
    pub xi: Vec<f64>,
    /// `Delta_k = x_{k+1} - x_k`, cyclic.
    pub gaps: Vec<f64>,
    /// `Delta_k / Delta_0 - 1`.
    pub deltas: Vec<f64>,
    /// `Delta_k N / L - 1`.
    pub deltas_mean: Vec<f64>,
    /// `(1 + deltas_mean_k)^-3 - 1`.
    pub deltas1: Vec<f64>,
    pub w: f64,
    /// `f(Delta_{k-1}) - f(Delta_k) + g F(x_k) - w` per particle.
    pub residual: Vec<f64>,
}

impl EquilibriumConfig {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn mean_gap(&self) -> f64 {
        self.ring / self.len() as f64
    }

    /// Position of particle `k` in the frame of the force profile.
    pub fn lab_position(&self, k: usize) -> f64 {
        self.offset + self.x0[k]
    }

    pub fn lab_positions(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.lab_position(k)).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Uniform configuration with `w = 0`; the exact solution for `F = 0`.
    pub fn uniform(n: usize, ring: f64, offset: f64) -> Self {
        build(ring, offset, &vec![0.0; n], 0.0, vec![0.0; n])
    }

    /// CSV with columns `k, x, gap, delta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,x,gap,delta\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                k, self.x0[k], self.gaps[k], self.deltas[k]
            ));
        }
        out
    }
}

/// Effective force `w = g / L * int F`.
pub fn compute_w(f: &ForceProfile, g: f64, l: f64) -> f64 {
    if f.is_zero() || g == 0.0 {
        return 0.0;
    }
    g * f.constants().c_int / l
}

/// Options for [`solve_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Upper bound accepted for `g / alpha`; `None` disables the check.
    pub c_alpha_g_bound: Option<f64>,
    pub max_newton: usize,
    /// Scan points for the rotation search.
    pub scan_points: usize,
    /// Lab position where the rotation scan starts.
    pub start_offset: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            c_alpha_g_bound: Some(DEFAULT_C_ALPHA_G_BOUND),
            max_newton: 60,
            scan_points: 24,
            start_offset: 0.0,
        }
    }
}

pub fn solve(p: &SystemParams, f: &ForceProfile) -> Result<EquilibriumConfig> {
    solve_with(p, f, &SolveOptions::default())
}

pub fn solve_with(p: &SystemParams, f: &ForceProfile, opts: &SolveOptions) -> Result<EquilibriumConfig> {
    p.validate()?;
    if (f.ring_length() - p.l).abs() > 1e-12 * p.l {
        return Err(Error::Parameter(format!(
            "force profile ring length {} differs from L = {}",
            f.ring_length(),
            p.l
        )));
    }
    if let Some(bound) = opts.c_alpha_g_bound {
        let c = p.g / p.alpha;
        if c > bound {
            return Err(Error::Parameter(format!(
                "g / alpha = {c:e} exceeds the bound {bound:e} required for the equilibrium construction"
            )));
        }
    }
    let n = p.n;
    let w = compute_w(f, p.g, p.l);
    if w == 0.0 && (f.is_zero() || p.g == 0.0) {
        return Ok(EquilibriumConfig::uniform(n, p.l, opts.start_offset));
    }
    let sys = GapSystem::new(p, f, w);
    let s0 = opts.start_offset;
    let mut zeta = vec![0.0; n];
    let r_start = sys.inner_solve(s0, &mut zeta, opts.max_newton)?;
    // Noise floor of the particle-0 equation, about 1e-14 of `c sum |F|`.
    let floor = 1e-14 * sys.c * n as f64 * f.constants().c0.max(1e-300);
    let offset = if r_start.abs() <= floor {
        s0
    } else {
        sys.rotation_root(s0, opts, &mut zeta, floor)?
    };
    let _ = sys.inner_solve(offset, &mut zeta, opts.max_newton)?;
    let scaled = sys.residuals(offset, &zeta);
    let scale = p.alpha / (p.delta() * p.delta());
    let residual = scaled.iter().map(|r| r * scale).collect();
    Ok(build(p.l, offset, &zeta, w, residual))
}

fn build(ring: f64, offset: f64, zeta: &[f64], w: f64, residual: Vec<f64>) -> EquilibriumConfig {
    let n = zeta.len();
    let delta = ring / n as f64;
    let e: Vec<f64> = (0..n).map(|k| zeta[(k + 1) % n] - zeta[k]).collect();
    let x0 = (0..n).map(|k| k as f64 * delta + delta * zeta[k]).collect();
    let gaps = e.iter().map(|ek| delta * (1.0 + ek)).collect();
    let deltas = e.iter().map(|ek| (ek - e[0]) / (1.0 + e[0])).collect();
    let deltas1 = e.iter().map(|&d| -d * (3.0 + 3.0 * d + d * d) / (1.0 + d).powi(3)).collect();
    EquilibriumConfig {
        ring,
        offset,
        x0,
        xi: zeta.to_vec(),
        gaps,
        deltas,
        deltas_mean: e,
        deltas1,
        w,
        residual,
    }
}

/// Equations scaled by `Delta^2 / alpha`, unknowns scaled by `Delta`.
struct GapSystem<'a> {
    f: &'a ForceProfile,
    n: usize,
    delta: f64,
    /// `g Delta^2 / alpha`
    c: f64,
    /// `w Delta^2 / alpha`
    cw: f64,
}

/// `(1 + a)^-2 - (1 + b)^-2` without cancellation.
#[inline]
pub(crate) fn inv_sq_diff(a: f64, b: f64) -> f64 {
    let pa = 1.0 + a;
    let pb = 1.0 + b;
    (b - a) * (2.0 + a + b) / (pa * pa * pb * pb)
}

impl<'a> GapSystem<'a> {
    fn new(p: &SystemParams, f: &'a ForceProfile, w: f64) -> Self {
        let delta = p.delta();
        GapSystem {
            f,
            n: p.n,
            delta,
            c: p.g * delta * delta / p.alpha,
            cw: w * delta * delta / p.alpha,
        }
    }

    fn position(&self, s: f64, zeta: &[f64], k: usize) -> f64 {
        s + k as f64 * self.delta + self.delta * zeta[k]
    }

    fn rel_gaps(&self, zeta: &[f64]) -> Vec<f64> {
        (0..self.n).map(|k| zeta[(k + 1) % self.n] - zeta[k]).collect()
    }

    fn residuals(&self, s: f64, zeta: &[f64]) -> Vec<f64> {
        let n = self.n;
        let e = self.rel_gaps(zeta);
        (0..n)
            .map(|k| {
                let prev = e[(k + n - 1) % n];
                inv_sq_diff(prev, e[k]) + self.c * self.f.value(self.position(s, zeta, k)) - self.cw
            })
            .collect()
    }

    /// Newton on particles `1..N-1` for fixed `s`; returns the residual of particle 0.
    fn inner_solve(&self, s: f64, zeta: &mut [f64], max_iter: usize) -> Result<f64> {
        let n = self.n;
        let m = n - 1;
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut last = f64::INFINITY;
        for iter in 0..max_iter {
            let r = self.residuals(s, zeta);
            let e = self.rel_gaps(zeta);
            let rmax = r[1..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..m {
                let k = i + 1;
                let cp = (1.0 + e[k - 1]).powi(-3);
                let cn = (1.0 + e[k]).powi(-3);
                let fp = self.f.derivs(self.position(s, zeta, k))[1];
                diag[i] = -2.0 * (cp + cn) + self.c * self.delta * fp;
                lower[i] = 2.0 * cp;
                upper[i] = 2.0 * cn;
            }
            let rhs: Vec<f64> = r[1..].iter().map(|v| -v).collect();
            let step = solve_tridiagonal(&lower, &diag, &upper, &rhs);
            let zmax = zeta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let smax = step.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if rmax == 0.0 || smax <= 4.0 * f64::EPSILON * zmax || (smax == 0.0) {
                return Ok(r[0]);
            }
            // Damped update: halve until every gap stays positive and the
            // residual does not grow.
            let mut lambda = 1.0;
            let mut trial = zeta.to_vec();
            loop {
                for i in 0..m {
                    trial[i + 1] = zeta[i + 1] + lambda * step[i];
                }
                let ok = self.rel_gaps(&trial).iter().all(|&d| 1.0 + d > 0.0);
                if ok {
                    let rt = self.residuals(s, &trial);
                    let rtmax = rt[1..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    if rtmax <= rmax || lambda < 1e-3 {
                        break;
                    }
                }
                lambda *= 0.5;
                if lambda < 1e-12 {
                    return Err(Error::Solver {
                        iterations: iter,
                        residual: rmax,
                        reason: "damping floor reached".into(),
                    });
                }
            }
            zeta.copy_from_slice(&trial);
            if iter > 8 && rmax >= last {
                // Stagnation at rounding level.
                let r = self.residuals(s, zeta);
                return Ok(r[0]);
            }
            last = rmax;
        }
        let r = self.residuals(s, zeta);
        let rmax = r[1..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if rmax <= 1e-12 {
            return Ok(r[0]);
        }
        Err(Error::Solver {
            iterations: max_iter,
            residual: rmax,
            reason: "Newton iteration did not converge".into(),
        })
    }

    /// Finds `s` in `[s0, s0 + Delta]` where the particle-0 residual vanishes.
    fn rotation_root(&self, s0: f64, opts: &SolveOptions, zeta: &mut [f64], floor: f64) -> Result<f64> {
        let pts = opts.scan_points.max(4);
        let h = self.delta / pts as f64;
        let r0 = |s: f64, z: &mut [f64]| self.inner_solve(s, z, opts.max_newton);
        let mut samples = Vec::with_capacity(pts + 1);
        for i in 0..=pts {
            let s = s0 + i as f64 * h;
            let v = r0(s, zeta)?;
            if v.abs() <= floor * 1e-2 {
                return Ok(s);
            }
            samples.push((s, v));
        }
        let bracket = samples
            .windows(2)
            .find(|w| w[0].1 > 0.0 && w[1].1 <= 0.0)
            .or_else(|| samples.windows(2).find(|w| w[0].1 * w[1].1 <= 0.0));
        let Some(win) = bracket else {
            let best = samples.iter().fold(f64::INFINITY, |m, x| m.min(x.1.abs()));
            if best <= floor {
                let s = samples.iter().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
                return Ok(s);
            }
            return Err(Error::Solver {
                iterations: pts,
                residual: best,
                reason: "no sign change of the rotation residual over one spacing".into(),
            });
        };
        let (a, fa, b, fb) = (win[0].0, win[0].1, win[1].0, win[1].1);
        brent(|s| r0(s, zeta), a, fa, b, fb, 4.0 * f64::EPSILON * (a.abs() + self.delta))
    }
}

/// Brent's method on a bracketing interval.
fn brent<G: FnMut(f64) -> Result<f64>>(mut g: G, a: f64, fa: f64, b: f64, fb: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut fa, mut b, mut fb) = (a, fa, b, fb);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() <= xtol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc)) + b * fa * fc / ((fb - fa) * (fb - fc)) + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let between = (s > lo.min(b)) && (s < lo.max(b));
        if !between
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
            || (mflag && (b - c).abs() < xtol)
            || (!mflag && (c - d).abs() < xtol)
        {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = g(s)?;
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Ok(b)
}

/// Thomas algorithm. `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / den } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Series coefficients `a_m` of `(1 + Q)^(-1/2) = sum_m a_m Q^m` for `m = 0..=m_max`.
pub fn a_m(m_max: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(m_max + 1);
    a.push(1.0);
    for m in 1..=m_max {
        let prev = a[m - 1];
        a.push(-prev * (2 * m - 1) as f64 / (2 * m) as f64);
    }
    a
}

/// Relative gaps recovered from the summed particle equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDeltas {
    /// `Q_k` per gap.
    pub q: Vec<f64>,
    /// `(1 + Q_k)^(-1/2) - 1`.
    pub closed: Vec<f64>,
    /// Truncated power series, present when every `|Q_k| < 1`.
    pub series: Option<Vec<f64>>,
    /// Largest number of series terms used.
    pub terms: usize,
}

/// Evaluates `delta_k` from `Q_k = alpha^-1 Delta_0^2 sum_{i=1..k} (g F(x_i) - w)`
/// at the lab positions `x`.
pub fn solve_via_series(p: &SystemParams, f: &ForceProfile, x: &[f64]) -> Result<SeriesDeltas> {
    p.validate()?;
    let n = x.len();
    if n != p.n {
        return Err(Error::Shape { expected: p.n, got: n });
    }
    let w = compute_w(f, p.g, p.l);
    let d0 = x[1] - x[0];
    let scale = d0 * d0 / p.alpha;
    let mut q = vec![0.0; n];
    let mut acc = 0.0;
    for k in 1..n {
        acc += p.g * f.value(x[k]) - w;
        q[k] = scale * acc;
    }
    let mut closed = Vec::with_capacity(n);
    for (k, &qk) in q.iter().enumerate() {
        if qk <= -1.0 {
            return Err(Error::SeriesDomain { k, q: qk });
        }
        closed.push((-0.5 * qk.ln_1p()).exp_m1());
    }
    let mut terms = 0;
    let series = if q.iter().all(|v| v.abs() < 1.0) {
        let coef = a_m(4000);
        let mut out = Vec::with_capacity(n);
        for &qk in &q {
            let mut sum = 0.0;
            let mut pow = 1.0;
            let mut m = 0;
            while m + 1 < coef.len() {
                pow *= qk;
                if pow.abs() < 1e-16 {
                    break;
                }
                m += 1;
                sum += coef[m] * pow;
            }
            terms = terms.max(m);
            out.push(sum);
        }
        Some(out)
    } else {
        None
    };
    Ok(SeriesDeltas {
        q,
        closed,
        series,
        terms,
    })
}

/// `W(x) = -int_0^x (g F - w)`.
pub fn virtual_potential(f: &ForceProfile, g: f64, w: f64, x: f64) -> Result<f64> {
    let int_f = f.constants().c_int;
    let l = f.ring_length();
    let defect = (g * int_f - l * w).abs();
    let scale = (g * int_f).abs().max((l * w).abs());
    if defect > 1e-10 * scale {
        return Err(Error::Consistency(format!(
            "virtual force is not cyclic: g int F - L w = {:e}",
            g * int_f - l * w
        )));
    }
    Ok(-g * f.integral_to(x) + w * x)
}

/// Bound checks on a solved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub n: usize,
    pub max_residual: f64,
    pub residual_tol: f64,
    pub residual_ok: bool,
    pub max_abs_delta: f64,
    pub delta_bound: f64,
    pub delta_ok: bool,
    /// Same metric with gaps referenced to `L / N` instead of `Delta_0`.
    pub max_abs_delta_mean: f64,
    pub max_delta_step: f64,
    pub delta_step_bound: f64,
    pub delta_step_ok: bool,
    /// `max_k |Delta_k N / L - 1|`.
    pub max_gap_uniformity: f64,
    /// `sum_m |Delta_m - Delta_{m-1}|`.
    pub gap_variation_sum: f64,
    pub gap_variation_bound: f64,
    pub gap_variation_ok: bool,
    /// `Delta_0 N / L - 1`: how far the two readings of `Delta` differ.
    pub first_gap_vs_mean: f64,
    pub all_ok: bool,
}

pub fn verify(eq: &EquilibriumConfig, p: &SystemParams, f: &ForceProfile) -> EquilibriumReport {
    let n = eq.len();
    let delta = p.delta();
    let c_ag = p.g / p.alpha;
    let l0 = f.support_length();
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let max_residual = eq.max_residual();
    let residual_tol = 1e-10 * p.alpha / (delta * delta);
    let max_abs_delta = max_abs(&eq.deltas);
    let delta_bound = 4.0 * c_ag * l0 * delta;
    let max_delta_step = (1..n)
        .map(|k| (eq.deltas[k] - eq.deltas[k - 1]).abs())
        .fold(0.0, f64::max);
    let delta_step_bound = 2.0 * c_ag * delta * delta;
    // Gap differences from the relative gaps, which carry the full precision.
    let gap_variation_sum: f64 = (0..n)
        .map(|m| delta * (eq.deltas_mean[m] - eq.deltas_mean[(m + n - 1) % n]).abs())
        .sum();
    let gap_variation_bound = 2.0 * c_ag * delta * delta;
    let residual_ok = max_residual <= residual_tol;
    let delta_ok = max_abs_delta <= delta_bound;
    let delta_step_ok = max_delta_step <= delta_step_bound;
    let gap_variation_ok = gap_variation_sum <= gap_variation_bound;
    EquilibriumReport {
        n,
        max_residual,
        residual_tol,
        residual_ok,
        max_abs_delta,
        delta_bound,
        delta_ok,
        max_abs_delta_mean: max_abs(&eq.deltas_mean),
        max_delta_step,
        delta_step_bound,
        delta_step_ok,
        max_gap_uniformity: max_abs(&eq.deltas_mean),
        gap_variation_sum,
        gap_variation_bound,
        gap_variation_ok,
        first_gap_vs_mean: eq.deltas_mean[0],
        all_ok: residual_ok && delta_ok && delta_step_ok && gap_variation_ok,
    }
}
