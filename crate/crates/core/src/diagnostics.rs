//! Macro-homogeneity metrics of trajectories and the aggregated bound
//! dashboard.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumReport;
use crate::params::{RegimeReport, SystemParams};
use crate::picard::{KernelReport, ProbeReport};
use crate::spectral::LinearBoundReport;
use crate::trajectory::Trajectory;

/// An arc `[start, start + len)` of the ring, wrapping at `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub len: f64,
}

/// Arcs of lengths `L/2, L/4, L/8, L/16`, each at offsets that are multiples
/// of half its length.
pub fn dyadic_windows(l: f64) -> Vec<Window> {
    let mut out = Vec::new();
    for j in 1..=4 {
        let len = l / f64::from(1u32 << j);
        let count = 2usize << j;
        for m in 0..count {
            out.push(Window {
                start: m as f64 * len / 2.0,
                len,
            });
        }
    }
    out
}

/// Number of wrapped positions in the window.
pub fn count_in(window: &Window, l: f64, positions: &[f64]) -> usize {
    positions
        .iter()
        .filter(|x| {
            let rel = (*x - window.start).rem_euclid(l);
            rel < window.len
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub t: f64,
    pub v_spread: f64,
    pub density_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    /// `sup_{i,t} |v_i(t) - V|`.
    pub v_spread: f64,
    pub v_spread_rel: f64,
    /// `sup_{t, I} |N(I,t)/N - |I|/L|` over the dyadic family.
    pub density_err: f64,
    /// Same restricted to the arcs of length `L/2`.
    pub density_err_half: f64,
    pub y_max: f64,
    pub y_max_over_delta: f64,
    /// Samples and particles with `|v_i - V| >= Delta`.
    pub window_exits: usize,
    pub horizon: f64,
    pub samples: usize,
    /// Mean velocity over all particles and samples.
    pub v_fit: f64,
    /// `sup |v_i(t) - v_fit|`.
    pub v_spread_fit: f64,
    pub v_spread_fit_rel: f64,
    pub windows: Vec<Window>,
    pub series: Vec<SampleMetrics>,
}

impl HomogeneityReport {
    /// CSV with columns `t, v_spread, density_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v_spread,density_err\n");
        for s in &self.series {
            out.push_str(&format!("{:e},{:e},{:e}\n", s.t, s.v_spread, s.density_err));
        }
        out
    }
}

/// Velocity spread, density error over the dyadic arcs and deviation size.
pub fn homogeneity(traj: &Trajectory, p: &SystemParams) -> HomogeneityReport {
    let windows = dyadic_windows(p.l);
    let n = traj.particles().max(1);
    let delta = p.delta();
    let per_sample: Vec<(SampleMetrics, f64, usize)> = traj
        .times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let x = &traj.positions[i];
            // The directly integrated deviation velocities resolve spreads
            // far below the rounding of `V + u`.
            let dev: Vec<f64> = match traj.deviations.u.get(i) {
                Some(u) if traj.deviations.times.len() == traj.times.len() => u.clone(),
                _ => traj.velocities[i].iter().map(|vi| vi - p.v).collect(),
            };
            let v_spread = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let exits = dev.iter().filter(|d| d.abs() >= delta).count();
            let mut err = 0.0f64;
            let mut half = 0.0f64;
            for w in &windows {
                let e = (count_in(w, p.l, x) as f64 / n as f64 - w.len / p.l).abs();
                err = err.max(e);
                if w.len == p.l / 2.0 {
                    half = half.max(e);
                }
            }
            (
                SampleMetrics {
                    t,
                    v_spread,
                    density_err: err,
                },
                half,
                exits,
            )
        })
        .collect();
    let v_count = traj.velocities.iter().map(Vec::len).sum::<usize>().max(1);
    let v_fit = traj.velocities.iter().flatten().sum::<f64>() / v_count as f64;
    let v_spread_fit = traj.velocities.iter().flatten().fold(0.0f64, |m, v| m.max((v - v_fit).abs()));
    let v_spread = per_sample.iter().fold(0.0f64, |m, s| m.max(s.0.v_spread));
    let y_max = traj.deviations.max_abs_y();
    HomogeneityReport {
        v_spread,
        v_spread_rel: v_spread / p.v,
        density_err: per_sample.iter().fold(0.0f64, |m, s| m.max(s.0.density_err)),
        density_err_half: per_sample.iter().fold(0.0f64, |m, s| m.max(s.1)),
        y_max,
        y_max_over_delta: y_max / delta,
        window_exits: per_sample.iter().map(|s| s.2).sum(),
        horizon: traj.times.last().copied().unwrap_or(0.0),
        samples: traj.times.len(),
        v_fit,
        v_spread_fit,
        v_spread_fit_rel: v_spread_fit / v_fit.abs().max(f64::MIN_POSITIVE),
        windows,
        series: per_sample.into_iter().map(|s| s.0).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Pass,
    Fail,
    /// A measured coefficient stayed within the allowed factor of its reference.
    Stable,
    Unstable,
    /// Measured without a pass criterion.
    Reported,
    /// The regime is violated, so the bound does not apply.
    NotApplicable,
    Missing,
}

impl RowStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, RowStatus::Pass | RowStatus::Stable | RowStatus::Reported)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardRow {
    pub name: String,
    pub source: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub status: RowStatus,
    pub note: String,
}

/// Reports fed to [`lemma_dashboard`]. Absent entries produce `missing` rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DashboardInputs {
    pub regime: Option<RegimeReport>,
    pub equilibrium: Option<EquilibriumReport>,
    pub linear: Option<LinearBoundReport>,
    pub kernel: Option<KernelReport>,
    pub probe: Option<ProbeReport>,
    pub homogeneity: Option<HomogeneityReport>,
    /// Same reports at a reference size for the coefficient-stability rows.
    pub linear_reference: Option<LinearBoundReport>,
    pub kernel_reference: Option<KernelReport>,
    /// `Delta` and `N` of the instance, for the trajectory rows.
    pub delta: Option<f64>,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub rows: Vec<DashboardRow>,
    pub regime_ok: bool,
    pub complete: bool,
    pub explicit_ok: bool,
    /// `pass`, `fail`, `incomplete` or `regime-violation`.
    pub verdict: String,
}

/// Allowed growth of a measured coefficient against its reference.
pub const STABILITY_FACTOR: f64 = 2.0;

struct Rows {
    rows: Vec<DashboardRow>,
    applicable: bool,
}

impl Rows {
    fn push(&mut self, name: &str, source: &str, lhs: Option<f64>, rhs: Option<f64>, status: RowStatus, note: &str) {
        let status = if !self.applicable && status != RowStatus::Missing {
            RowStatus::NotApplicable
        } else {
            status
        };
        self.rows.push(DashboardRow {
            name: name.into(),
            source: source.into(),
            lhs,
            rhs,
            status,
            note: note.into(),
        });
    }

    fn bound(&mut self, name: &str, source: &str, lhs: f64, rhs: f64, ok: bool, note: &str) {
        let st = if ok { RowStatus::Pass } else { RowStatus::Fail };
        self.push(name, source, Some(lhs), Some(rhs), st, note);
    }

    fn measured(&mut self, name: &str, source: &str, value: f64, reference: Option<f64>, note: &str) {
        match reference {
            Some(r) => {
                let limit = STABILITY_FACTOR * r;
                let st = if value <= limit { RowStatus::Stable } else { RowStatus::Unstable };
                self.push(name, source, Some(value), Some(limit), st, note);
            }
            None => self.push(name, source, Some(value), None, RowStatus::Reported, note),
        }
    }

    fn missing(&mut self, source: &str) {
        self.push(source, source, None, None, RowStatus::Missing, "report not supplied");
    }
}

/// One row per bound; regime violations turn every dependent row into
/// `not-applicable`.
pub fn lemma_dashboard(inputs: &DashboardInputs) -> Verdict {
    let mut rows = Rows {
        rows: Vec::new(),
        applicable: true,
    };
    let regime_ok = match &inputs.regime {
        Some(r) => {
            for e in &r.entries {
                rows.bound(&e.name, "regime", e.lhs, e.rhs, e.satisfied, &e.relation);
            }
            r.all_satisfied()
        }
        None => {
            rows.missing("regime");
            false
        }
    };
    rows.applicable = regime_ok || inputs.regime.is_none();

    match &inputs.equilibrium {
        Some(e) => {
            rows.bound("residual", "equilibrium", e.max_residual, e.residual_tol, e.residual_ok, "Newton residual <= 1e-10 alpha / Delta^2");
            rows.bound("delta_bound", "equilibrium", e.max_abs_delta, e.delta_bound, e.delta_ok, "|delta_k| <= 4 g L0 Delta / alpha");
            rows.bound("diff_delta_k", "equilibrium", e.max_delta_step, e.delta_step_bound, e.delta_step_ok, "|delta_k - delta_{k-1}| <= 2 C_alpha_g Delta^2");
            rows.bound("gap_variation", "equilibrium", e.gap_variation_sum, e.gap_variation_bound, e.gap_variation_ok, "sum |Delta_m - Delta_{m-1}| <= 2 C_alpha_g Delta^2");
        }
        None => rows.missing("equilibrium"),
    }

    match &inputs.linear {
        Some(l) => {
            for b in [&l.zero_mode_growth, &l.zero_forcing_sup, &l.zero_forcing_integral] {
                let note = format!("{}; max lhs/rhs over {} samples", b.relation, b.samples);
                rows.bound(&b.name, "spectral", b.max_ratio, 1.0, b.passed, &note);
            }
            let reference = inputs.linear_reference.as_ref().map(|r| r.eta_ratio.max_literal);
            rows.measured(
                "complex_n_neq_0",
                "spectral",
                l.eta_ratio.max_literal,
                reference,
                "max_n n sup_t |eta(n,t)| / (C_A_g sqrt(M Delta / alpha))",
            );
        }
        None => rows.missing("spectral"),
    }

    match &inputs.kernel {
        Some(k) => {
            rows.bound("bound_hi_0", "kernel", k.chi0_sup, k.chi0_bound, k.chi0_ok, "sup_t |chi(0,t)| <= Delta C(F,2)");
            let r = inputs.kernel_reference.as_ref();
            rows.measured("bound_hi_nonzero", "kernel", k.chi_scaled_max, r.map(|r| r.chi_scaled_max), "max_n n sup_t |chi(n,t)|");
            rows.measured("bound_hi_1_1", "kernel", k.zeta11_ratio, r.map(|r| r.zeta11_ratio), "max_n |zeta_11(n)| / (g Delta^2 / alpha)");
            rows.measured("bound_hi_1_2", "kernel", k.zeta12_ratio, r.map(|r| r.zeta12_ratio), "max_n |zeta_12(n)| / (g Delta / alpha)");
        }
        None => rows.missing("kernel"),
    }

    match &inputs.probe {
        Some(p) => {
            let enough = p.pairs_used >= 20;
            rows.bound("contraction", "picard", p.q, 1.0, p.q < 1.0 && enough, &format!("max ratio over {} pairs", p.pairs_used));
            rows.bound(
                "ball_invariance",
                "picard",
                p.images_in_ball as f64,
                p.images_checked as f64,
                p.images_in_ball == p.images_checked,
                "images K(H) + eta inside the ball",
            );
            rows.measured("hi_2", "picard", p.k2_ratio_to_scale, None, "K2 Lipschitz ratio / (g Delta / alpha)");
        }
        None => rows.missing("picard"),
    }

    match &inputs.homogeneity {
        Some(h) => {
            rows.bound("y_k_less_Delta", "dynamics", h.y_max_over_delta, 1.0, h.y_max_over_delta <= 1.0, "sup |y_k(t)| / Delta");
            let delta = inputs.delta.unwrap_or(f64::NAN);
            rows.bound("friction_window", "dynamics", h.v_spread, delta, h.v_spread < delta && h.window_exits == 0, "sup |v_k - V| < Delta");
            let n = inputs.n.map_or(f64::NAN, |n| n as f64);
            rows.bound("density_half", "dynamics", h.density_err_half, 4.0 / n, h.density_err_half <= 4.0 / n, "L/2 arcs, <= 4/N");
        }
        None => rows.missing("dynamics"),
    }

    let rows = rows.rows;
    let complete = rows.iter().all(|r| r.status != RowStatus::Missing);
    let explicit_ok = rows.iter().all(|r| r.status != RowStatus::Fail && r.status != RowStatus::Unstable);
    let verdict = if !regime_ok && inputs.regime.is_some() {
        "regime-violation"
    } else if !complete {
        "incomplete"
    } else if explicit_ok {
        "pass"
    } else {
        "fail"
    };
    Verdict {
        rows,
        regime_ok,
        complete,
        explicit_ok,
        verdict: verdict.into(),
    }
}
