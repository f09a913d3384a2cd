//! Fourier transform over the particle index, characteristic roots and
//! Duhamel solutions of the linearized deviation equations.
//!
//! Convention: `Phi(h)(n) = (1/N) sum_k h_k exp(2 pi i n k / N)` with
//! zero-based `k`, inverse `h_k = sum_n Phi(h)(n) exp(-2 pi i n k / N)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumConfig;
use crate::error::{Error, Result};
use crate::expint::{self, Step};
use crate::forcefield::ForceProfile;
use crate::params::SystemParams;
use crate::trajectory::{sample_indices, DeviationTrajectory, TimeGrid};

/// Planned transform of fixed length. Power-of-two lengths go through the
/// FFT; other lengths use the direct sum with a twiddle table.
#[derive(Clone)]
pub struct Fourier {
    n: usize,
    /// rustfft's forward (`e^{-i}`) and inverse (`e^{+i}`) plans.
    plans: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    twiddle: Vec<Complex64>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier")
            .field("n", &self.n)
            .field("fast", &self.plans.is_some())
            .finish()
    }
}

impl Fourier {
    pub fn new(n: usize) -> Self {
        if n.is_power_of_two() {
            let mut planner = FftPlanner::new();
            Fourier {
                n,
                plans: Some((planner.plan_fft_forward(n), planner.plan_fft_inverse(n))),
                twiddle: Vec::new(),
            }
        } else {
            let twiddle = (0..n)
                .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64))
                .collect();
            Fourier {
                n,
                plans: None,
                twiddle,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::Shape {
                expected: self.n,
                got,
            });
        }
        Ok(())
    }

    /// `sum_k h_k exp(sign * 2 pi i n k / N)`.
    fn direct(&self, h: &[Complex64], sign: i64) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|m| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, hk) in h.iter().enumerate() {
                    let j = (m * k) % n;
                    let tw = if sign > 0 { self.twiddle[j] } else { self.twiddle[j].conj() };
                    acc += hk * tw;
                }
                acc
            })
            .collect()
    }

    pub fn dft_complex(&self, h: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(h.len())?;
        let scale = 1.0 / self.n as f64;
        let mut out = match &self.plans {
            Some((_, inv)) => {
                let mut buf = h.to_vec();
                inv.process(&mut buf);
                buf
            }
            None => self.direct(h, 1),
        };
        for v in &mut out {
            *v *= scale;
        }
        Ok(out)
    }

    pub fn dft(&self, h: &[f64]) -> Result<Vec<Complex64>> {
        let c: Vec<Complex64> = h.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.dft_complex(&c)
    }

    pub fn idft(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(b.len())?;
        Ok(match &self.plans {
            Some((fwd, _)) => {
                let mut buf = b.to_vec();
                fwd.process(&mut buf);
                buf
            }
            None => self.direct(b, -1),
        })
    }

    /// Real part of the inverse transform and the largest discarded imaginary part.
    pub fn idft_real(&self, b: &[Complex64]) -> Result<(Vec<f64>, f64)> {
        let c = self.idft(b)?;
        let imag = c.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        Ok((c.into_iter().map(|v| v.re).collect(), imag))
    }
}

/// Forward transform of real data.
pub fn dft(h: &[f64]) -> Vec<Complex64> {
    Fourier::new(h.len()).dft(h).expect("length matches plan")
}

/// Inverse transform.
pub fn idft(b: &[Complex64]) -> Vec<Complex64> {
    Fourier::new(b.len()).idft(b).expect("length matches plan")
}

/// Symbol of the forward difference `h_{k+1} - h_k` under the transform.
pub fn difference_symbol(n: usize, modes: usize) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * n as f64 / modes as f64) - 1.0
}

/// `D_0 = 1/Delta`, `D_n = n sqrt(alpha / (M Delta))`.
pub fn weights(p: &SystemParams) -> Vec<f64> {
    let delta = p.delta();
    let s = (p.alpha / (p.m * delta)).sqrt();
    (0..p.n)
        .map(|n| if n == 0 { 1.0 / delta } else { n as f64 * s })
        .collect()
}

/// Measured constant `c` in `sum_{n=1}^{N-1} 1/D_n <= c sqrt(M Delta / alpha) ln N`.
pub fn weight_sum_constant(p: &SystemParams) -> f64 {
    let w = weights(p);
    let sum: f64 = w[1..].iter().map(|d| 1.0 / d).sum();
    sum / ((p.m * p.delta() / p.alpha).sqrt() * (p.n as f64).ln())
}

/// Mode amplitudes `b(n, t)` on a time grid, stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeField {
    pub modes: usize,
    pub grid: TimeGrid,
    pub values: Vec<Complex64>,
    pub weights: Vec<f64>,
}

impl ModeField {
    pub fn zeros(p: &SystemParams, grid: TimeGrid) -> Self {
        ModeField {
            modes: p.n,
            grid,
            values: vec![Complex64::new(0.0, 0.0); p.n * grid.len()],
            weights: weights(p),
        }
    }

    pub fn from_rows(p: &SystemParams, grid: TimeGrid, rows: Vec<Vec<Complex64>>) -> Result<Self> {
        if rows.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: rows.len(),
            });
        }
        let mut values = Vec::with_capacity(p.n * grid.len());
        for r in rows {
            if r.len() != p.n {
                return Err(Error::Shape {
                    expected: p.n,
                    got: r.len(),
                });
            }
            values.extend(r);
        }
        Ok(ModeField {
            modes: p.n,
            grid,
            values,
            weights: weights(p),
        })
    }

    pub fn samples(&self) -> usize {
        self.grid.len()
    }

    pub fn at(&self, i: usize, n: usize) -> Complex64 {
        self.values[i * self.modes + n]
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.values[i * self.modes..(i + 1) * self.modes]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        let m = self.modes;
        &mut self.values[i * m..(i + 1) * m]
    }

    /// Time series of one mode.
    pub fn mode(&self, n: usize) -> Vec<Complex64> {
        (0..self.samples()).map(|i| self.at(i, n)).collect()
    }

    /// `sup_{n,t} D_n |b(n,t)|`.
    pub fn norm(&self) -> f64 {
        self.values
            .par_chunks(self.modes)
            .map(|row| {
                row.iter()
                    .zip(&self.weights)
                    .fold(0.0f64, |m, (b, d)| m.max(d * b.norm()))
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `sup_t |b(n, t)|` for every `n`.
    pub fn sup_per_mode(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.modes];
        for row in self.values.chunks(self.modes) {
            for (o, b) in out.iter_mut().zip(row) {
                *o = o.max(b.norm());
            }
        }
        out
    }

    pub fn zip_with(&self, other: &ModeField, op: impl Fn(Complex64, Complex64) -> Complex64 + Sync) -> ModeField {
        assert_eq!(self.values.len(), other.values.len(), "mode fields on different grids");
        ModeField {
            values: self.values.iter().zip(&other.values).map(|(a, b)| op(*a, *b)).collect(),
            ..self.clone()
        }
    }

    pub fn sub(&self, other: &ModeField) -> ModeField {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ModeField) -> ModeField {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> ModeField {
        ModeField {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// CSV `n, t, re, im, D_n`, keeping every `stride`-th time sample.
    pub fn to_csv(&self, stride: usize) -> String {
        let mut out = String::from("n,t,re,im,D_n\n");
        for i in sample_indices(self.samples(), stride) {
            let t = self.grid.time(i);
            for n in 0..self.modes {
                let b = self.at(i, n);
                out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", n, t, b.re, b.im, self.weights[n]));
            }
        }
        out
    }
}

/// Roots and Duhamel coefficients of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeRoot {
    pub n: usize,
    /// `z1 + z2 = -A/M`, `z1 z2 = stiffness`.
    pub stiffness: f64,
    /// `1 - 16 M alpha Delta^-3 (1 - cos(2 pi n / N)) / A^2`.
    pub disc: f64,
    pub z1: Complex64,
    pub z2: Complex64,
    /// `1 / (M (z1 - z2))`.
    pub r1: Complex64,
    /// `1 / (M (z2 - z1))`.
    pub r2: Complex64,
    /// Complex-conjugate pair.
    pub complex: bool,
    /// Double root within `|disc| < 1e-14`; the confluent kernel is used.
    pub degenerate: bool,
}

pub fn roots(p: &SystemParams, n: usize) -> ModeRoot {
    let beta = p.a / (2.0 * p.m);
    let k = p.mode_stiffness(n);
    let (z1, z2, disc) = expint::char_roots(beta, k);
    let r1 = 1.0 / (p.m * (z1 - z2));
    ModeRoot {
        n,
        stiffness: k,
        disc,
        z1,
        z2,
        r1,
        r2: -r1,
        complex: disc < 0.0,
        degenerate: disc.abs() < expint::DEGENERATE_DISC,
    }
}

pub fn all_roots(p: &SystemParams) -> Vec<ModeRoot> {
    (0..p.n).map(|n| roots(p, n)).collect()
}

/// `(-1)^l / ((A/2) sqrt(disc))`, the closed form printed for the Duhamel
/// coefficients. It is twice `1 / (M (z_l - z_other))`; kept for comparison.
pub fn printed_r_coefficients(p: &SystemParams, n: usize) -> (Complex64, Complex64) {
    let sq = Complex64::new(roots(p, n).disc, 0.0).sqrt();
    let r = 1.0 / (0.5 * p.a * sq);
    (-r, r)
}

/// One-step propagators of every mode for step `dt`.
pub fn mode_steps(p: &SystemParams, dt: f64) -> Vec<Step> {
    (0..p.n).map(|n| Step::new(p.m, p.a, p.mode_stiffness(n), dt)).collect()
}

/// Solves `M eta'' + A eta' + M K_n eta = q(t)` with zero initial data,
/// `q` piecewise linear between grid samples. Returns `eta` and `eta'`.
pub fn mode_solution_with_velocity(
    p: &SystemParams,
    n: usize,
    forcing: &[Complex64],
    grid: TimeGrid,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if forcing.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            got: forcing.len(),
        });
    }
    let step = Step::new(p.m, p.a, p.mode_stiffness(n), grid.dt);
    Ok(run_mode(&step, forcing))
}

/// `eta(n, t)` on the grid for sampled forcing `g phi~(n, t)`.
pub fn mode_solution(p: &SystemParams, n: usize, forcing: &[Complex64], grid: TimeGrid) -> Result<Vec<Complex64>> {
    Ok(mode_solution_with_velocity(p, n, forcing, grid)?.0)
}

pub(crate) fn run_mode(step: &Step, forcing: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let zero = Complex64::new(0.0, 0.0);
    let mut eta = Vec::with_capacity(forcing.len());
    let mut vel = Vec::with_capacity(forcing.len());
    let (mut e, mut v) = (zero, zero);
    eta.push(e);
    vel.push(v);
    for w in forcing.windows(2) {
        (e, v) = step.apply(e, v, w[0], w[1]);
        eta.push(e);
        vel.push(v);
    }
    (eta, vel)
}

/// Applies the Duhamel recurrence to every mode of a time-major forcing field.
pub(crate) fn duhamel_field(steps: &[Step], forcing: &ModeField) -> (ModeField, ModeField) {
    let modes = forcing.modes;
    let samples = forcing.samples();
    let cols: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..modes)
        .into_par_iter()
        .map(|n| run_mode(&steps[n], &forcing.mode(n)))
        .collect();
    let mut eta = forcing.clone();
    let mut vel = forcing.clone();
    for i in 0..samples {
        for n in 0..modes {
            eta.values[i * modes + n] = cols[n].0[i];
            vel.values[i * modes + n] = cols[n].1[i];
        }
    }
    (eta, vel)
}

/// Mode-space solution of the cut-off linear system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSolution {
    pub grid: TimeGrid,
    /// Transformed forcing `g phi~(n, t)`.
    pub forcing: ModeField,
    pub eta: ModeField,
    pub eta_velocity: ModeField,
    /// `y_{k,0}(t)` and its velocity on every grid sample.
    pub trajectory: DeviationTrajectory,
    /// Largest imaginary part discarded in the reconstruction.
    pub max_imag: f64,
}

/// `g phi_k(t)` for all `k` at time `t`.
pub fn forcing_row(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, t: f64) -> Vec<f64> {
    (0..eq.len())
        .map(|k| {
            let x = eq.lab_position(k);
            p.g * (f.value(x + p.v * t) - f.value(x))
        })
        .collect()
}

/// Transformed forcing on the grid.
pub fn forcing_field(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, grid: TimeGrid) -> Result<ModeField> {
    let tr = Fourier::new(p.n);
    let rows: Result<Vec<Vec<Complex64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| tr.dft(&forcing_row(p, eq, f, grid.time(i))))
        .collect();
    ModeField::from_rows(p, grid, rows?)
}

pub fn linear_modes(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, grid: TimeGrid) -> Result<LinearSolution> {
    p.validate()?;
    if eq.len() != p.n {
        return Err(Error::Shape {
            expected: p.n,
            got: eq.len(),
        });
    }
    let forcing = forcing_field(p, eq, f, grid)?;
    let steps = mode_steps(p, grid.dt);
    let (eta, eta_velocity) = duhamel_field(&steps, &forcing);
    let tr = Fourier::new(p.n);
    let rows: Result<Vec<(Vec<f64>, Vec<f64>, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (y, im1) = tr.idft_real(eta.row(i))?;
            let (u, im2) = tr.idft_real(eta_velocity.row(i))?;
            Ok((y, u, im1.max(im2)))
        })
        .collect();
    let rows = rows?;
    let mut max_imag = 0.0f64;
    let mut y = Vec::with_capacity(rows.len());
    let mut u = Vec::with_capacity(rows.len());
    for (yi, ui, im) in rows {
        max_imag = max_imag.max(im);
        y.push(yi);
        u.push(ui);
    }
    Ok(LinearSolution {
        grid,
        forcing,
        eta,
        eta_velocity,
        trajectory: DeviationTrajectory {
            times: grid.times(),
            y,
            u,
        },
        max_imag,
    })
}

/// `y_{k,0}(t)` reconstructed from the mode solutions.
pub fn linear_solution(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, grid: TimeGrid) -> Result<DeviationTrajectory> {
    Ok(linear_modes(p, eq, f, grid)?.trajectory)
}

/// A bound checked at every grid sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledBound {
    pub name: String,
    pub relation: String,
    /// `max_t lhs(t) / rhs(t)`.
    pub max_ratio: f64,
    pub violations: usize,
    pub samples: usize,
    pub passed: bool,
    /// Subsampled `t, lhs, rhs` for plotting.
    pub t: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl SampledBound {
    fn evaluate(name: &str, relation: &str, t: &[f64], lhs: &[f64], rhs: &[f64], keep: usize) -> Self {
        let mut max_ratio = 0.0f64;
        let mut violations = 0;
        for (l, r) in lhs.iter().zip(rhs) {
            if l > r {
                violations += 1;
            }
            let ratio = if *r > 0.0 { l / r } else if *l > 0.0 { f64::INFINITY } else { 0.0 };
            max_ratio = max_ratio.max(ratio);
        }
        let idx = sample_indices(t.len(), (t.len() / keep.max(1)).max(1));
        SampledBound {
            name: name.into(),
            relation: relation.into(),
            max_ratio,
            violations,
            samples: t.len(),
            passed: violations == 0,
            t: idx.iter().map(|&i| t[i]).collect(),
            lhs: idx.iter().map(|&i| lhs[i]).collect(),
            rhs: idx.iter().map(|&i| rhs[i]).collect(),
        }
    }
}

/// Measured ratios `n sup_t |eta(n,t)| / (C_A_g sqrt(M Delta / alpha))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRatio {
    /// Ratio per mode with the literal index `n` (`n = 1..N-1`; entry 0 unused).
    pub per_mode: Vec<f64>,
    pub max_literal: f64,
    /// Same with `n` replaced by `min(n, N - n)`.
    pub max_folded: f64,
    pub argmax_literal: usize,
    pub argmax_folded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundReport {
    pub zero_mode_growth: SampledBound,
    pub zero_forcing_sup: SampledBound,
    pub zero_forcing_integral: SampledBound,
    pub eta_ratio: ModeRatio,
    pub all_explicit_passed: bool,
}

/// Checks the explicit zero-mode bounds at every grid sample and measures
/// the non-zero-mode ratio.
pub fn bound_suite(p: &SystemParams, f: &ForceProfile, sol: &LinearSolution) -> LinearBoundReport {
    let delta = p.delta();
    let c = f.constants();
    let c_ag = p.g / p.alpha;
    let c_a = p.g / p.a;
    let t = sol.grid.times();
    let keep = 512;

    let eta0: Vec<f64> = (0..t.len()).map(|i| sol.eta.at(i, 0).norm()).collect();
    let rhs0: Vec<f64> = t
        .iter()
        .map(|ti| delta * delta * (ti + 1.0) * c_a * (c.cf_combined + 4.0 * c_ag))
        .collect();
    let zero_mode_growth = SampledBound::evaluate(
        "complex_n_0",
        "|eta(0,t)| <= Delta^2 (t+1) C_A_g (C(F) + 4 C_alpha_g)",
        &t,
        &eta0,
        &rhs0,
        keep,
    );

    // phi~(0, t) itself, without the factor g.
    let phi0: Vec<f64> = (0..t.len())
        .map(|i| if p.g == 0.0 { 0.0 } else { sol.forcing.at(i, 0).re / p.g })
        .collect();
    let sup_bound = delta * delta * c.c2 + 8.0 * c.c1 * c_ag * delta;
    let zero_forcing_sup = SampledBound::evaluate(
        "lemma_fi_1",
        "|phi~(0,t)| <= Delta^2 C(F,2) + 8 C(F,1) C_alpha_g Delta",
        &t,
        &phi0.iter().map(|v| v.abs()).collect::<Vec<_>>(),
        &vec![sup_bound; t.len()],
        keep,
    );

    let mut integral = vec![0.0; t.len()];
    for i in 1..t.len() {
        integral[i] = integral[i - 1] + 0.5 * sol.grid.dt * (phi0[i - 1] + phi0[i]);
    }
    let rhs_int: Vec<f64> = t
        .iter()
        .map(|ti| delta * delta * (2.0 * (ti + 1.0) * (c_ag + c.c2) + 2.0 * c.c1))
        .collect();
    let zero_forcing_integral = SampledBound::evaluate(
        "lemma_fi_2",
        "|int_0^t phi~(0,s) ds| <= Delta^2 (2 (t+1) (C_alpha_g + C(F,2)) + 2 C(F,1))",
        &t,
        &integral.iter().map(|v| v.abs()).collect::<Vec<_>>(),
        &rhs_int,
        keep,
    );

    let sup = sol.eta.sup_per_mode();
    let denom = c_a * (p.m * delta / p.alpha).sqrt();
    let nn = p.n;
    let ratio = |n: usize, idx: usize| if denom > 0.0 { idx as f64 * sup[n] / denom } else { 0.0 };
    let mut per_mode = vec![0.0; nn];
    let (mut max_literal, mut argmax_literal) = (0.0f64, 0);
    let (mut max_folded, mut argmax_folded) = (0.0f64, 0);
    for n in 1..nn {
        let lit = ratio(n, n);
        let fold = ratio(n, n.min(nn - n));
        per_mode[n] = lit;
        if lit > max_literal {
            max_literal = lit;
            argmax_literal = n;
        }
        if fold > max_folded {
            max_folded = fold;
            argmax_folded = n;
        }
    }
    let all_explicit_passed = zero_mode_growth.passed && zero_forcing_sup.passed && zero_forcing_integral.passed;
    LinearBoundReport {
        zero_mode_growth,
        zero_forcing_sup,
        zero_forcing_integral,
        eta_ratio: ModeRatio {
            per_mode,
            max_literal,
            max_folded,
            argmax_literal,
            argmax_folded,
        },
        all_explicit_passed,
    }
}
