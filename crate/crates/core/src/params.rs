//! Model parameters, derived scales and the regime-condition checker.
//!
//! All quantities are plain `f64` in a consistent (dimensionless) unit
//! system. The regime conditions are reported with numeric margins and
//! never turn into errors: runs deliberately outside the asymptotic regime
//! are part of normal use.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default value of the "sufficiently small" absolute constant.
pub const DEFAULT_RHO: f64 = 0.01;
/// Default horizon fraction.
pub const DEFAULT_BETA: f64 = 0.01;
/// Default upper bound used for the boundedness check on `g / alpha`.
pub const DEFAULT_C_ALPHA_G_BOUND: f64 = 1.0;

/// Micro- and macro-parameters of the ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Particle count.
    #[serde(rename = "N")]
    pub n: usize,
    /// Ring length.
    #[serde(rename = "L")]
    pub l: f64,
    /// Particle mass.
    #[serde(rename = "M")]
    pub m: f64,
    /// Coulomb coupling.
    pub alpha: f64,
    /// External force scale.
    pub g: f64,
    /// Friction offset.
    #[serde(rename = "A0")]
    pub a0: f64,
    /// Friction slope.
    #[serde(rename = "A")]
    pub a: f64,
    /// Target macro velocity.
    #[serde(rename = "V")]
    pub v: f64,
    pub rho: f64,
    pub beta: f64,
}

/// Scales derived from [`SystemParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedScales {
    /// Mean gap `L / N`.
    #[serde(rename = "Delta")]
    pub delta: f64,
    #[serde(rename = "C_alpha_g")]
    pub c_alpha_g: f64,
    #[serde(rename = "C_A_g")]
    pub c_a_g: f64,
    /// `g / w` with `w = a(V)`; infinite when `w = 0`.
    #[serde(rename = "C_w_g")]
    pub c_w_g: f64,
    pub omega_max: f64,
    pub t_damp: f64,
    /// `beta * N / C_A_g`.
    #[serde(rename = "T_horizon")]
    pub t_horizon: f64,
    /// `beta * N`, the horizon as written in the main theorem.
    #[serde(rename = "T_theorem")]
    pub t_theorem: f64,
}

impl SystemParams {
    /// Validates the field invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Parameter(what.to_string()));
        if self.n < 3 {
            return fail("N must be at least 3");
        }
        let finite = [
            self.l, self.m, self.alpha, self.g, self.a0, self.a, self.v, self.rho, self.beta,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return fail("all parameters must be finite");
        }
        if self.l <= 0.0 {
            return fail("L must be positive");
        }
        if self.m <= 0.0 {
            return fail("M must be positive");
        }
        if self.alpha <= 0.0 {
            return fail("alpha must be positive");
        }
        if self.g < 0.0 {
            return fail("g must be non-negative");
        }
        if self.a <= 0.0 {
            return fail("A must be positive");
        }
        if self.v <= 0.0 {
            return fail("V must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return fail("rho must lie in (0, 1)");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail("beta must lie in (0, 1)");
        }
        Ok(())
    }

    /// Instantiates `g = N^-gamma1`, `alpha = N^-gamma2`, `M = N^-gamma3`,
    /// `A = N^-gamma_a` with `L = 1`. The friction offset is set for `w = 0`;
    /// call [`calibrate_friction`](Self::calibrate_friction) once the effective
    /// force is known.
    pub fn from_exponents(
        n: usize,
        gamma1: f64,
        gamma2: f64,
        gamma3: f64,
        gamma_a: f64,
        rho: f64,
        v: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("N must be positive".into()));
        }
        let nf = n as f64;
        let a = nf.powf(-gamma_a);
        let p = SystemParams {
            n,
            l: 1.0,
            m: nf.powf(-gamma3),
            alpha: nf.powf(-gamma2),
            g: nf.powf(-gamma1),
            a0: -a * v,
            a,
            v,
            rho,
            beta: DEFAULT_BETA,
        };
        p.validate()?;
        Ok(p)
    }

    /// Returns a copy with `A0 = w - A V`, so that `a(V) = w`.
    pub fn calibrate_friction(&self, w: f64) -> Self {
        SystemParams {
            a0: w - self.a * self.v,
            ..*self
        }
    }

    /// Linear friction law `a(v) = A0 + A v`, extended to all `v`.
    pub fn friction(&self, v: f64) -> f64 {
        self.a0 + self.a * v
    }

    pub fn delta(&self) -> f64 {
        self.l / self.n as f64
    }

    /// `4 alpha / M * Delta^-3 * (1 - cos(2 pi n / N))`, the squared mode frequency.
    pub fn mode_stiffness(&self, mode: usize) -> f64 {
        let s = (PI * mode as f64 / self.n as f64).sin();
        4.0 * self.alpha / self.m * self.delta().powi(-3) * 2.0 * s * s
    }

    pub fn derived(&self) -> DerivedScales {
        let delta = self.delta();
        // sin^2(pi n / N) peaks at n = floor(N / 2)
        let max_stiff = self.mode_stiffness(self.n / 2);
        let c_a_g = self.g / self.a;
        let w = self.friction(self.v);
        DerivedScales {
            delta,
            c_alpha_g: self.g / self.alpha,
            c_a_g,
            c_w_g: if w == 0.0 { f64::INFINITY } else { self.g / w },
            omega_max: max_stiff.sqrt(),
            t_damp: 2.0 * self.m / self.a,
            t_horizon: self.beta * self.n as f64 / c_a_g,
            t_theorem: self.beta * self.n as f64,
        }
    }
}

/// One inequality of the regime report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub name: String,
    /// Human-readable form of the inequality.
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `lhs / rhs` for order conditions; `|a(V) - w| / tolerance` for the calibration entry.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub entries: Vec<ConditionEntry>,
}

impl RegimeReport {
    pub fn all_satisfied(&self) -> bool {
        self.entries.iter().all(|e| e.satisfied)
    }

    pub fn violations(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.satisfied)
            .map(|e| e.name.as_str())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn strict_less(name: &str, relation: &str, lhs: f64, rhs: f64) -> ConditionEntry {
    let margin = lhs / rhs;
    ConditionEntry {
        name: name.into(),
        relation: relation.into(),
        lhs,
        rhs,
        satisfied: margin < 1.0,
        margin,
    }
}

fn less_equal(name: &str, relation: &str, lhs: f64, rhs: f64) -> ConditionEntry {
    let margin = lhs / rhs;
    ConditionEntry {
        name: name.into(),
        relation: relation.into(),
        lhs,
        rhs,
        satisfied: margin <= 1.0,
        margin,
    }
}

/// Evaluates every regime inequality for `p`, with `w` the effective force of
/// the attached profile. Violations are reported, not raised.
pub fn check_conditions(p: &SystemParams, w: f64) -> Result<RegimeReport> {
    check_conditions_with_bound(p, w, DEFAULT_C_ALPHA_G_BOUND)
}

pub fn check_conditions_with_bound(
    p: &SystemParams,
    w: f64,
    c_alpha_g_bound: f64,
) -> Result<RegimeReport> {
    p.validate()?;
    let nf = p.n as f64;
    let d = p.derived();
    let mut entries = Vec::with_capacity(8);

    let a_v = p.friction(p.v);
    let tol = 1e-12 * (w.abs() + p.a * p.v + p.a0.abs()).max(f64::MIN_POSITIVE);
    let defect = (a_v - w).abs();
    entries.push(ConditionEntry {
        name: "a_w".into(),
        relation: "A0 + A V = w".into(),
        lhs: a_v,
        rhs: w,
        satisfied: defect <= tol,
        margin: defect / tol,
    });

    entries.push(strict_less(
        "cond_main_1_left",
        "A^2 / (N alpha rho) < M",
        p.a * p.a / (nf * p.alpha * p.rho),
        p.m,
    ));
    entries.push(strict_less(
        "cond_main_1_right_alpha",
        "M < rho alpha / (N ln N)",
        p.m,
        p.rho * p.alpha / (nf * nf.ln()),
    ));
    entries.push(strict_less(
        "cond_main_1_right_a",
        "M < rho A",
        p.m,
        p.rho * p.a,
    ));
    entries.push(less_equal(
        "cond_main_2",
        "g / A <= rho N^-3",
        d.c_a_g,
        p.rho * nf.powi(-3),
    ));
    entries.push(strict_less(
        "cond_roots",
        "(16 (2 pi)^2)^-1 < M alpha N / A^2",
        1.0 / (16.0 * (2.0 * PI).powi(2)),
        p.m * p.alpha * nf / (p.a * p.a),
    ));
    // Exact form: the discriminant of every non-zero mode is negative iff it
    // is negative for the softest mode n = 1.
    let s1 = (PI / nf).sin();
    entries.push(strict_less(
        "roots_complex",
        "1 < 16 M alpha Delta^-3 (1 - cos(2 pi / N)) / A^2",
        1.0,
        16.0 * p.m * p.alpha * d.delta.powi(-3) * 2.0 * s1 * s1 / (p.a * p.a),
    ));
    entries.push(less_equal(
        "c_alpha_g_bounded",
        "g / alpha <= bound",
        d.c_alpha_g,
        c_alpha_g_bound,
    ));
    Ok(RegimeReport { entries })
}

/// Exponent tuple for [`SystemParams::from_exponents`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma_a: f64,
}

impl Exponents {
    /// Membership in the exponent region stated for the `g, alpha, M` family
    /// (which says nothing about `A`).
    pub fn in_stated_region(&self) -> bool {
        let Exponents {
            gamma1: g1,
            gamma2: g2,
            gamma3: g3,
            ..
        } = *self;
        g1 > 2.0 && g2 > 0.0 && g3 > 0.0 && g1 > g2 && 1.0 + 2.0 * g1 - g2 > g3 && g3 > (1.0 + g2).max(g1)
    }

    pub fn instantiate(&self, n: usize, rho: f64, v: f64) -> Result<SystemParams> {
        SystemParams::from_exponents(n, self.gamma1, self.gamma2, self.gamma3, self.gamma_a, rho, v)
    }
}

/// A feasible grid point together with its worst margin across all sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasiblePoint {
    pub exponents: Exponents,
    /// Largest margin ratio over all order conditions and all `N` (smaller is safer).
    pub worst_margin: f64,
}

/// Grid search over exponent tuples: `gamma1 in [2, 8]`, `gamma2 in [step, 3]`,
/// `gamma3 in [step, 8]`, `gamma_a in [0, gamma1]`, all on a lattice of
/// spacing `step`. A tuple is kept when every condition except the friction
/// calibration holds for every size in `sizes`.
pub fn feasibility_grid(sizes: &[usize], step: f64, rho: f64, v: f64) -> Vec<FeasiblePoint> {
    let lattice = |lo: f64, hi: f64| -> Vec<f64> {
        let count = ((hi - lo) / step).round() as usize;
        (0..=count).map(|i| lo + i as f64 * step).collect()
    };
    let mut out = Vec::new();
    for &g1 in &lattice(2.0, 8.0) {
        for &g2 in &lattice(step, 3.0) {
            for &g3 in &lattice(step, 8.0) {
                for &ga in &lattice(0.0, g1) {
                    let ex = Exponents {
                        gamma1: g1,
                        gamma2: g2,
                        gamma3: g3,
                        gamma_a: ga,
                    };
                    if let Some(worst) = worst_margin(&ex, sizes, rho, v) {
                        out.push(FeasiblePoint {
                            exponents: ex,
                            worst_margin: worst,
                        });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin));
    out
}

fn worst_margin(ex: &Exponents, sizes: &[usize], rho: f64, v: f64) -> Option<f64> {
    let mut worst = 0.0f64;
    for &n in sizes {
        let p = ex.instantiate(n, rho, v).ok()?;
        let report = check_conditions(&p, p.friction(p.v)).ok()?;
        for e in report.entries.iter().filter(|e| e.name != "a_w") {
            if !e.satisfied {
                return None;
            }
            worst = worst.max(e.margin);
        }
    }
    Some(worst)
}

/// The exponent tuple used for the "feasible desk" instances throughout the
/// test and acceptance suites. It satisfies every regime condition for all
/// `N >= 64` with `rho = 0.01`.
pub const DESK_EXPONENTS: Exponents = Exponents {
    gamma1: 6.75,
    gamma2: 1.0,
    gamma3: 3.75,
    gamma_a: 2.5,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(n: usize) -> SystemParams {
        DESK_EXPONENTS.instantiate(n, DEFAULT_RHO, 1.0).unwrap()
    }

    #[test]
    fn from_exponents_direct_powers() {
        let p = SystemParams::from_exponents(64, 3.0, 1.0, 4.0, 0.0, 0.01, 1.0).unwrap();
        assert_eq!(p.g, 64f64.powi(-3));
        assert_eq!(p.alpha, 1.0 / 64.0);
        assert_eq!(p.m, 64f64.powi(-4));
        assert_eq!(p.a, 1.0);
    }

    #[test]
    fn from_exponents_rejects_zero_size() {
        assert!(SystemParams::from_exponents(0, 3.0, 1.0, 4.0, 0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn stated_region_membership() {
        let ex = Exponents {
            gamma1: 3.0,
            gamma2: 1.0,
            gamma3: 4.0,
            gamma_a: 0.0,
        };
        assert!(ex.in_stated_region());
        assert!(!DESK_EXPONENTS.in_stated_region());
    }

    #[test]
    fn calibration_examples() {
        let p = SystemParams::from_exponents(64, 3.0, 1.0, 4.0, 0.0, 0.01, 1.0).unwrap();
        let c = p.calibrate_friction(0.0);
        assert_eq!(c.a0, -1.0);
        let q = SystemParams { a: 2.0, v: 0.5, ..p }.calibrate_friction(1e-6);
        assert_eq!(q.a0, 1e-6 - 1.0);
    }

    #[test]
    fn zero_force_calibration_reports_a_w_ok() {
        let p = desk(64).calibrate_friction(0.0);
        let r = check_conditions(&p, 0.0).unwrap();
        assert!(r.get("a_w").unwrap().satisfied);
    }

    #[test]
    fn desk_instance_is_feasible_and_sides_match_by_hand() {
        let p = desk(64).calibrate_friction(0.0);
        let r = check_conditions(&p, 0.0).unwrap();
        assert!(r.all_satisfied(), "violations: {:?}", r.violations());
        let n = 64f64;
        let a = n.powf(-2.5);
        let alpha = 1.0 / n;
        let m = n.powf(-3.75);
        let g = n.powf(-6.75);
        let by_hand = [
            ("cond_main_1_left", a * a / (n * alpha * 0.01), m),
            ("cond_main_1_right_alpha", m, 0.01 * alpha / (n * n.ln())),
            ("cond_main_1_right_a", m, 0.01 * a),
            ("cond_main_2", g / a, 0.01 / (n * n * n)),
            ("cond_roots", 1.0 / (64.0 * PI * PI), m * alpha * n / (a * a)),
        ];
        for (name, lhs, rhs) in by_hand {
            let e = r.get(name).unwrap();
            assert!((e.lhs / lhs - 1.0).abs() < 1e-12, "{name} lhs");
            assert!((e.rhs / rhs - 1.0).abs() < 1e-12, "{name} rhs");
            assert!(lhs < rhs || (name == "cond_main_2" && lhs <= rhs));
        }
    }

    #[test]
    fn physical_numbers_are_flagged() {
        // N^-1 = 1e-10, M = 1e-30, alpha = 1e-28 with g, A chosen freely.
        let p = SystemParams {
            n: 10_000_000_000,
            l: 1.0,
            m: 1e-30,
            alpha: 1e-28,
            g: 1e-20,
            a0: 0.0,
            a: 1e-25,
            v: 1.0,
            rho: DEFAULT_RHO,
            beta: DEFAULT_BETA,
        }
        .calibrate_friction(0.0);
        let r = check_conditions(&p, 0.0).unwrap();
        assert!(!r.violations().is_empty());
        assert!(r.get("a_w").unwrap().satisfied);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = desk(64);
        p.rho = 1.5;
        assert!(check_conditions(&p, 0.0).is_err());
        p = desk(64);
        p.n = 2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn derived_scales() {
        let p = desk(64);
        let d = p.derived();
        assert_eq!(d.delta * 64.0, 1.0);
        let expected = (8.0 * p.alpha / p.m * d.delta.powi(-3)).sqrt();
        assert!((d.omega_max / expected - 1.0).abs() < 1e-14);
        // odd N: the maximum of 1 - cos is below 2
        let q = SystemParams { n: 7, ..p };
        let dq = q.derived();
        let best = (0..7)
            .map(|n| 1.0 - (2.0 * PI * n as f64 / 7.0).cos())
            .fold(0.0, f64::max);
        let expected = (4.0 * q.alpha / q.m * q.delta().powi(-3) * best).sqrt();
        assert!((dq.omega_max / expected - 1.0).abs() < 1e-12);
        assert!((d.t_horizon - p.beta * 64.0 * p.a / p.g).abs() <= 1e-9 * d.t_horizon);
    }

    #[test]
    fn grid_search_finds_desk_tuple() {
        let pts = feasibility_grid(&[64, 256], 0.25, DEFAULT_RHO, 1.0);
        assert!(!pts.is_empty());
        assert!(pts.iter().any(|p| p.exponents == DESK_EXPONENTS));
        for fp in &pts {
            assert!(fp.exponents.gamma_a <= fp.exponents.gamma1);
        }
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let p = desk(64);
        let s = serde_json::to_string(&p).unwrap();
        for key in ["\"N\"", "\"L\"", "\"M\"", "\"alpha\"", "\"g\"", "\"A0\"", "\"A\"", "\"V\"", "\"rho\"", "\"beta\""] {
            assert!(s.contains(key), "{key} missing in {s}");
        }
        let back: SystemParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = s.replacen('{', "{\"extra\":1,", 1);
        assert!(serde_json::from_str::<SystemParams>(&bad).is_err());
    }
}
