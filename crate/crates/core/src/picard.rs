//! Fixed-point form `H = K(H) + eta` of the nonlinear deviation equations
//! in mode space, with `K = K1 + K2 + K3` the Duhamel images of the
//! transformed perturbation terms.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Deviation;
use crate::equilibrium::EquilibriumConfig;
use crate::error::{Error, Result};
use crate::forcefield::ForceProfile;
use crate::params::SystemParams;
use crate::spectral::{duhamel_field, linear_modes, mode_steps, Fourier, ModeField};
use crate::trajectory::{DeviationTrajectory, TimeGrid};

/// `sup_{n,t} D_n |b(n,t)|` over the stored grid.
pub fn bt_norm(b: &ModeField) -> f64 {
    b.norm()
}

/// The free term `eta`: mode solution of the cut-off linear system.
pub fn free_term(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, grid: TimeGrid) -> Result<ModeField> {
    Ok(linear_modes(p, eq, f, grid)?.eta)
}

/// `K1(H)`, `K2(H)`, `K3(H)` separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KParts {
    pub k1: ModeField,
    pub k2: ModeField,
    pub k3: ModeField,
}

impl KParts {
    pub fn total(&self) -> ModeField {
        self.k1.add(&self.k2).add(&self.k3)
    }
}

/// How much of the perturbation to transform.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Summed,
    Parts,
}

/// Transformed `L~_j(n, t)` for every sample, either summed or per term.
fn transformed_terms(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    h: &ModeField,
    split: Split,
) -> Result<Vec<ModeField>> {
    if h.modes != p.n {
        return Err(Error::Shape { expected: p.n, got: h.modes });
    }
    let sys = Deviation::new(p, eq, f)?;
    let tr = Fourier::new(p.n);
    let grid = h.grid;
    let rows: Result<Vec<Vec<Vec<Complex64>>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (y, _) = tr.idft_real(h.row(i))?;
            let terms = sys.terms(grid.time(i), &y).map_err(|e| match e {
                Error::Consistency(msg) => Error::BallExit(msg),
                other => other,
            })?;
            match split {
                Split::Summed => Ok(vec![tr.dft(&terms.total())?]),
                Split::Parts => Ok(vec![tr.dft(&terms.l1)?, tr.dft(&terms.l2)?, tr.dft(&terms.l3)?]),
            }
        })
        .collect();
    let rows = rows?;
    let count = rows.first().map_or(0, Vec::len);
    (0..count)
        .map(|j| ModeField::from_rows(p, grid, rows.iter().map(|r| r[j].clone()).collect()))
        .collect()
}

/// `K(H)` on the grid of `H`.
pub fn apply_k(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, h: &ModeField) -> Result<ModeField> {
    let l = transformed_terms(p, eq, f, h, Split::Summed)?;
    let steps = mode_steps(p, h.grid.dt);
    Ok(duhamel_field(&steps, &l[0]).0)
}

/// `K1(H)`, `K2(H)`, `K3(H)` on the grid of `H`.
pub fn apply_k_parts(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, h: &ModeField) -> Result<KParts> {
    let mut l = transformed_terms(p, eq, f, h, Split::Parts)?;
    let steps = mode_steps(p, h.grid.dt);
    let k3 = duhamel_field(&steps, &l.pop().expect("three parts")).0;
    let k2 = duhamel_field(&steps, &l.pop().expect("three parts")).0;
    let k1 = duhamel_field(&steps, &l.pop().expect("three parts")).0;
    Ok(KParts { k1, k2, k3 })
}

/// `K1` applied to the linearization `g F'(x_k(0) + V t) y_k` of `L1`,
/// i.e. the convolution of `chi` with `H`.
pub fn apply_k1_linear(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, h: &ModeField) -> Result<ModeField> {
    let tr = Fourier::new(p.n);
    let lab = eq.lab_positions();
    let grid = h.grid;
    let rows: Result<Vec<Vec<Complex64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let t = grid.time(i);
            let (y, _) = tr.idft_real(h.row(i))?;
            let l: Vec<f64> = (0..p.n).map(|k| p.g * f.derivs(lab[k] + p.v * t)[1] * y[k]).collect();
            tr.dft(&l)
        })
        .collect();
    let l = ModeField::from_rows(p, grid, rows?)?;
    Ok(duhamel_field(&mode_steps(p, grid.dt), &l).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Radius of the admissible ball; `None` means `2 ||eta||`.
    pub gamma_ball: Option<f64>,
    /// Consecutive growths of the iterate difference treated as divergence.
    pub divergence_window: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            gamma_ball: None,
            divergence_window: 3,
        }
    }
}

/// Result of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardState {
    #[serde(rename = "H")]
    pub h: ModeField,
    pub eta: ModeField,
    /// `||H^(j+1) - H^(j)||`, starting with `||H^(1) - H^(0)||`.
    pub iterate_history: Vec<f64>,
    /// Largest ratio of successive differences.
    pub q_est: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eta_norm: f64,
    pub gamma_ball: f64,
    /// `||H^(j)||` for each iterate.
    pub iterate_norms: Vec<f64>,
    /// Every iterate stayed in the ball.
    pub ball_invariant: bool,
    /// `||H - K(H) - eta||` at the returned `H`.
    pub residual: f64,
}

impl PicardState {
    /// `idft` of the fixed point: deviations `y_k(t)` on the whole grid.
    pub fn deviations(&self) -> Result<DeviationTrajectory> {
        let tr = Fourier::new(self.h.modes);
        let grid = self.h.grid;
        let mut y = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            y.push(tr.idft_real(self.h.row(i))?.0);
        }
        Ok(DeviationTrajectory {
            times: grid.times(),
            u: vec![vec![0.0; self.h.modes]; grid.len()],
            y,
        })
    }

    /// JSON summary without the fields.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "iterations": self.iterations,
            "converged": self.converged,
            "iterate_history": self.iterate_history,
            "iterate_norms": self.iterate_norms,
            "q_est": self.q_est,
            "eta_norm": self.eta_norm,
            "gamma_ball": self.gamma_ball,
            "ball_invariant": self.ball_invariant,
            "residual": self.residual,
            "relative_residual": if self.eta_norm > 0.0 { self.residual / self.eta_norm } else { self.residual },
        })
    }
}

/// Iterates `H^(j+1) = K(H^(j)) + eta` from `H^(0) = eta` until
/// `||H^(j+1) - H^(j)|| <= tol ||eta||` or `max_iter` iterations.
pub fn solve_fixed_point(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    eta: &ModeField,
    tol: f64,
    max_iter: usize,
) -> Result<PicardState> {
    solve_fixed_point_with(p, eq, f, eta, tol, max_iter, &PicardOptions::default())
}

pub fn solve_fixed_point_with(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    eta: &ModeField,
    tol: f64,
    max_iter: usize,
    opts: &PicardOptions,
) -> Result<PicardState> {
    let eta_norm = bt_norm(eta);
    if !eta_norm.is_finite() {
        return Err(Error::Parameter("free term has infinite norm".into()));
    }
    let gamma = opts.gamma_ball.unwrap_or(2.0 * eta_norm);
    let mut h = eta.clone();
    let mut history: Vec<f64> = Vec::new();
    let mut norms = vec![eta_norm];
    let mut ball_invariant = eta_norm <= gamma;
    let mut growths = 0usize;
    let mut converged = false;
    let mut next = apply_k(p, eq, f, &h)?.add(eta);
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let diff = bt_norm(&next.sub(&h));
        if let Some(&last) = history.last() {
            growths = if diff > last { growths + 1 } else { 0 };
        }
        history.push(diff);
        h = next;
        let nh = bt_norm(&h);
        norms.push(nh);
        ball_invariant &= nh <= gamma;
        if growths >= opts.divergence_window {
            return Err(Error::NonContraction(format!(
                "iterate differences grew {growths} times in a row: {history:?}"
            )));
        }
        next = apply_k(p, eq, f, &h)?.add(eta);
        if diff <= tol * eta_norm {
            converged = true;
            break;
        }
    }
    let residual = bt_norm(&next.sub(&h));
    let q_est = history
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    Ok(PicardState {
        h,
        eta: eta.clone(),
        iterate_history: history,
        q_est,
        iterations,
        converged,
        eta_norm,
        gamma_ball: gamma,
        iterate_norms: norms,
        ball_invariant,
        residual,
    })
}

/// Measured Lipschitz ratios of `K` on random pairs in the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub gamma_ball: f64,
    pub trials: usize,
    pub pairs_used: usize,
    pub skipped: usize,
    /// `max ||K(H1) - K(H2)|| / ||H1 - H2||`.
    pub q: f64,
    pub q_k1: f64,
    pub q_k2: f64,
    pub q_k3: f64,
    /// `g Delta / alpha`, the scale of the `K2` estimate.
    pub k2_scale: f64,
    /// `q_k2 / k2_scale`.
    pub k2_ratio_to_scale: f64,
    /// Per-pair total ratio.
    pub ratios: Vec<f64>,
    /// Images `K(H) + eta` of probe members that stayed in the ball.
    pub images_in_ball: usize,
    pub images_checked: usize,
    pub seed: u64,
}

/// Random real field: modes with `min(n, N - n) < N / 8`, cubic in `t`,
/// scaled to `||H|| = radius`.
pub fn random_field<R: Rng>(p: &SystemParams, grid: TimeGrid, radius: f64, rng: &mut R) -> ModeField {
    let n = p.n;
    let band = (n / 8).max(1);
    let mut coef = vec![[Complex64::new(0.0, 0.0); 4]; n];
    for m in 0..band.min(n / 2 + 1) {
        for c in coef[m].iter_mut() {
            let re = rng.gen_range(-1.0..1.0);
            let im = if m == 0 || 2 * m == n { 0.0 } else { rng.gen_range(-1.0..1.0) };
            *c = Complex64::new(re, im);
        }
        if m > 0 && 2 * m != n {
            let mirror = coef[m].map(|c| c.conj());
            coef[n - m] = mirror;
        }
    }
    let mut field = ModeField::zeros(p, grid);
    let horizon = grid.horizon();
    for i in 0..grid.len() {
        let s = grid.time(i) / horizon;
        let row = field.row_mut(i);
        for m in 0..n {
            let c = &coef[m];
            row[m] = c[0] + (c[1] + (c[2] + c[3] * s) * s) * s;
        }
    }
    let norm = field.norm();
    if norm > 0.0 {
        field.scale(radius / norm)
    } else {
        field
    }
}

/// Draws `trials` pairs in the ball `||H|| <= gamma_ball` (radii uniform in
/// `[gamma/2, gamma]`) on the grid of `eta` and measures the ratios.
pub fn contraction_probe(
    p: &SystemParams,
    eq: &EquilibriumConfig,
    f: &ForceProfile,
    eta: &ModeField,
    gamma_ball: f64,
    trials: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let grid = eta.grid;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| master.gen()).collect();
    struct Trial {
        total: f64,
        parts: [f64; 3],
        inside: [bool; 2],
        skipped: bool,
    }
    let results: Result<Vec<Trial>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let r1 = gamma_ball * rng.gen_range(0.5..=1.0);
            let r2 = gamma_ball * rng.gen_range(0.5..=1.0);
            let h1 = random_field(p, grid, r1, &mut rng);
            let h2 = random_field(p, grid, r2, &mut rng);
            let dh = bt_norm(&h1.sub(&h2));
            let k1 = apply_k_parts(p, eq, f, &h1)?;
            let k2 = apply_k_parts(p, eq, f, &h2)?;
            let t1 = k1.total();
            let t2 = k2.total();
            let inside = [bt_norm(&t1.add(eta)) <= gamma_ball, bt_norm(&t2.add(eta)) <= gamma_ball];
            if dh == 0.0 {
                return Ok(Trial {
                    total: 0.0,
                    parts: [0.0; 3],
                    inside,
                    skipped: true,
                });
            }
            let r = |a: &ModeField, b: &ModeField| bt_norm(&a.sub(b)) / dh;
            Ok(Trial {
                total: r(&t1, &t2),
                parts: [r(&k1.k1, &k2.k1), r(&k1.k2, &k2.k2), r(&k1.k3, &k2.k3)],
                inside,
                skipped: false,
            })
        })
        .collect();
    let results = results?;
    let used: Vec<&Trial> = results.iter().filter(|t| !t.skipped).collect();
    let max = |sel: &dyn Fn(&Trial) -> f64| used.iter().map(|t| sel(t)).fold(0.0, f64::max);
    let q_k2 = max(&|t| t.parts[1]);
    let k2_scale = p.g * p.delta() / p.alpha;
    Ok(ProbeReport {
        gamma_ball,
        trials,
        pairs_used: used.len(),
        skipped: results.len() - used.len(),
        q: max(&|t| t.total),
        q_k1: max(&|t| t.parts[0]),
        q_k2,
        q_k3: max(&|t| t.parts[2]),
        k2_scale,
        k2_ratio_to_scale: if k2_scale > 0.0 { q_k2 / k2_scale } else { 0.0 },
        ratios: used.iter().map(|t| t.total).collect(),
        images_in_ball: results.iter().map(|t| t.inside.iter().filter(|b| **b).count()).sum(),
        images_checked: 2 * results.len(),
        seed,
    })
}

/// Coefficients entering the `K1` estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub n: usize,
    /// `sup_t |chi(0, t)|`.
    pub chi0_sup: f64,
    /// `Delta C(F, 2)`.
    pub chi0_bound: f64,
    pub chi0_ok: bool,
    /// `max_{1 <= n <= N/2} n sup_t |chi(n, t)|`.
    pub chi_scaled_max: f64,
    /// `n sup_t |chi(n, t)|` for `n = 0..=N/2`.
    pub chi_scaled: Vec<f64>,
    /// `max_n |zeta_{1,1}(n)| / (g Delta^2 / alpha)`.
    pub zeta11_ratio: f64,
    /// `max_n |zeta_{1,2}(n)| / (g Delta / alpha)`.
    pub zeta12_ratio: f64,
    pub zeta11_max: f64,
    pub zeta12_max: f64,
}

/// `chi(n, t) = Phi(F'(x_k(0) + V t))(n)` on `grid`, and
/// `zeta_{1,2} = Phi(delta^1)`, `zeta_{1,1} = Phi(nabla^- delta^1)`.
pub fn kernel_bounds(p: &SystemParams, eq: &EquilibriumConfig, f: &ForceProfile, grid: TimeGrid) -> Result<KernelReport> {
    p.validate()?;
    let n = p.n;
    if eq.len() != n {
        return Err(Error::Shape { expected: n, got: eq.len() });
    }
    let tr = Fourier::new(n);
    let lab = eq.lab_positions();
    let sups: Result<Vec<Vec<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let t = grid.time(i);
            let d1: Vec<f64> = lab.iter().map(|x| f.derivs(x + p.v * t)[1]).collect();
            Ok(tr.dft(&d1)?.iter().map(|c| c.norm()).collect())
        })
        .collect();
    let mut sup = vec![0.0f64; n];
    for row in sups? {
        for (s, v) in sup.iter_mut().zip(row) {
            *s = s.max(v);
        }
    }
    let delta = p.delta();
    let c2 = f.constants().c2;
    let chi_scaled: Vec<f64> = (0..=n / 2).map(|m| m as f64 * sup[m]).collect();
    let chi_scaled_max = chi_scaled[1..].iter().copied().fold(0.0, f64::max);
    let d1 = &eq.deltas1;
    let grad: Vec<f64> = (0..n).map(|k| d1[k] - d1[(k + n - 1) % n]).collect();
    let z12 = tr.dft(d1)?;
    let z11 = tr.dft(&grad)?;
    let zeta12_max = z12.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let zeta11_max = z11.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let s11 = p.g * delta * delta / p.alpha;
    let s12 = p.g * delta / p.alpha;
    let ratio = |v: f64, s: f64| if s > 0.0 { v / s } else { 0.0 };
    Ok(KernelReport {
        n,
        chi0_sup: sup[0],
        chi0_bound: delta * c2,
        chi0_ok: sup[0] <= delta * c2,
        chi_scaled_max,
        chi_scaled,
        zeta11_ratio: ratio(zeta11_max, s11),
        zeta12_ratio: ratio(zeta12_max, s12),
        zeta11_max,
        zeta12_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{DEFAULT_RHO, DESK_EXPONENTS};

    fn desk(n: usize) -> (SystemParams, EquilibriumConfig, ForceProfile) {
        let p = DESK_EXPONENTS.instantiate(n, DEFAULT_RHO, 1.0).unwrap();
        let f = ForceProfile::canonical(1.0);
        let eq = crate::equilibrium::solve(&p, &f).unwrap();
        (p.calibrate_friction(eq.w), eq, f)
    }

    #[test]
    fn norm_of_inverse_weights_is_one() {
        let (p, _, _) = desk(16);
        let grid = TimeGrid::new(0.1, 4).unwrap();
        let mut b = ModeField::zeros(&p, grid);
        assert_eq!(bt_norm(&b), 0.0);
        let w = b.weights.clone();
        for i in 0..grid.len() {
            for (m, v) in b.row_mut(i).iter_mut().enumerate() {
                *v = Complex64::new(1.0 / w[m], 0.0);
            }
        }
        assert!((bt_norm(&b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn k_vanishes_at_zero_and_k2_is_linear() {
        let (p, eq, f) = desk(16);
        let d = p.derived();
        let grid = TimeGrid::covering(2.0 * d.t_damp, d.t_damp / 50.0).unwrap();
        let zero = ModeField::zeros(&p, grid);
        assert_eq!(bt_norm(&apply_k(&p, &eq, &f, &zero).unwrap()), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_field(&p, grid, 1e-6, &mut rng);
        let one = apply_k_parts(&p, &eq, &f, &h).unwrap();
        let two = apply_k_parts(&p, &eq, &f, &h.scale(2.0)).unwrap();
        let rel = bt_norm(&two.k2.sub(&one.k2.scale(2.0))) / bt_norm(&two.k2);
        assert!(rel <= 1e-12, "{rel}");
        let sum = one.total();
        let direct = apply_k(&p, &eq, &f, &h).unwrap();
        assert!(bt_norm(&sum.sub(&direct)) <= 1e-12 * bt_norm(&direct));
    }

    #[test]
    fn zero_force_fixed_point_is_immediate() {
        let (p, _, _) = desk(16);
        let f = ForceProfile::zero(1.0).unwrap();
        let eq = crate::equilibrium::solve(&p, &f).unwrap();
        let grid = TimeGrid::new(1e-3, 10).unwrap();
        let eta = free_term(&p, &eq, &f, grid).unwrap();
        assert_eq!(bt_norm(&eta), 0.0);
        let st = solve_fixed_point(&p, &eq, &f, &eta, 1e-12, 10).unwrap();
        assert!(st.converged);
        assert_eq!(st.iterations, 1);
        assert_eq!(bt_norm(&st.h), 0.0);
    }

    #[test]
    fn zero_force_kernels_vanish() {
        let (p, _, _) = desk(16);
        let f = ForceProfile::zero(1.0).unwrap();
        let eq = crate::equilibrium::solve(&p, &f).unwrap();
        let r = kernel_bounds(&p, &eq, &f, TimeGrid::new(0.01, 10).unwrap()).unwrap();
        assert_eq!((r.chi0_sup, r.chi_scaled_max, r.zeta11_max, r.zeta12_max), (0.0, 0.0, 0.0, 0.0));
    }
}
