//! External driving force on the ring.
//!
//! Profiles are compactly supported on an arc of length `L0` and evaluated
//! modulo the ring length. The canonical profile is the smooth bump
//! `exp(1 - 1/(1 - u^2))`, `u = 2 (x - center) / L0`, with peak value 1.

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumConfig;
use crate::error::{Error, Result};
use crate::quad;

/// Number of samples used on the support when maximizing `|F^(m)|`.
pub const DENSE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Zero,
    Bump { l0: f64, center: f64, amplitude: f64 },
    Table(Spline),
}

/// Clamped cubic spline on `[xs[0], xs[last]]`, identically zero outside.
#[derive(Debug, Clone, PartialEq)]
struct Spline {
    xs: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    second: Vec<f64>,
}

impl Spline {
    fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 3 || values.len() != n {
            return Err(Error::Config(
                "custom-table needs at least 3 knots and one value per knot".into(),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("custom-table knots must be strictly increasing".into()));
        }
        if values[0] != 0.0 || values[n - 1] != 0.0 {
            return Err(Error::Config("custom-table values must vanish at both ends".into()));
        }
        // Clamped end conditions S'(x0) = S'(xn) = 0, tridiagonal system for S''.
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = h[0] / 3.0;
        upper[0] = h[0] / 6.0;
        rhs[0] = (values[1] - values[0]) / h[0];
        for i in 1..n - 1 {
            lower[i] = h[i - 1] / 6.0;
            diag[i] = (h[i - 1] + h[i]) / 3.0;
            upper[i] = h[i] / 6.0;
            rhs[i] = (values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1];
        }
        lower[n - 1] = h[n - 2] / 6.0;
        diag[n - 1] = h[n - 2] / 3.0;
        rhs[n - 1] = -(values[n - 1] - values[n - 2]) / h[n - 2];
        let second = crate::equilibrium::solve_tridiagonal(&lower, &diag, &upper, &rhs);
        Ok(Spline { xs, values, second })
    }

    fn segment(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return None;
        }
        let i = self.xs.partition_point(|&k| k <= x);
        Some(i.clamp(1, n - 1) - 1)
    }

    /// Value and the first three derivatives at `x` within segment `i`.
    fn local(&self, i: usize, x: f64) -> [f64; 4] {
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        let d2 = a * m0 + b * m1;
        let d3 = (m1 - m0) / h;
        [v, d1, d2, d3]
    }
}

/// Serialized form of a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    Zero {
        #[serde(rename = "L0", default, skip_serializing_if = "Option::is_none")]
        l0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
        #[serde(rename = "L", default = "unit")]
        ring: f64,
    },
    Bump {
        #[serde(rename = "L0")]
        l0: f64,
        center: f64,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(rename = "L", default = "unit")]
        ring: f64,
    },
    CustomTable {
        xs: Vec<f64>,
        values: Vec<f64>,
        #[serde(rename = "L", default = "unit")]
        ring: f64,
    },
}

fn unit() -> f64 {
    1.0
}

/// External force profile `F(x)` on a ring of length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileSpec", into = "ProfileSpec")]
pub struct ForceProfile {
    shape: Shape,
    ring: f64,
}

impl TryFrom<ProfileSpec> for ForceProfile {
    type Error = Error;

    fn try_from(spec: ProfileSpec) -> Result<Self> {
        match spec {
            ProfileSpec::Zero { ring, .. } => ForceProfile::zero(ring),
            ProfileSpec::Bump {
                l0,
                center,
                amplitude,
                ring,
            } => ForceProfile::bump(l0, center, amplitude, ring),
            ProfileSpec::CustomTable { xs, values, ring } => ForceProfile::table(xs, values, ring),
        }
    }
}

impl From<ForceProfile> for ProfileSpec {
    fn from(f: ForceProfile) -> Self {
        match f.shape {
            Shape::Zero => ProfileSpec::Zero {
                l0: None,
                center: None,
                amplitude: None,
                ring: f.ring,
            },
            Shape::Bump {
                l0,
                center,
                amplitude,
            } => ProfileSpec::Bump {
                l0,
                center,
                amplitude,
                ring: f.ring,
            },
            Shape::Table(s) => ProfileSpec::CustomTable {
                xs: s.xs,
                values: s.values,
                ring: f.ring,
            },
        }
    }
}

/// Maxima of `|F|, |F'|, |F''|` and the integral over the ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceConstants {
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C_int")]
    pub c_int: f64,
    /// `6 C2 + 24 C1`.
    #[serde(rename = "CF_combined")]
    pub cf_combined: f64,
}

fn check_ring(ring: f64) -> Result<()> {
    if !(ring > 0.0 && ring.is_finite()) {
        return Err(Error::Parameter("ring length must be positive".into()));
    }
    Ok(())
}

impl ForceProfile {
    pub fn zero(ring: f64) -> Result<Self> {
        check_ring(ring)?;
        Ok(ForceProfile {
            shape: Shape::Zero,
            ring,
        })
    }

    pub fn bump(l0: f64, center: f64, amplitude: f64, ring: f64) -> Result<Self> {
        check_ring(ring)?;
        if !(l0 > 0.0 && l0 < ring) {
            return Err(Error::Parameter("support length must lie in (0, L)".into()));
        }
        if !center.is_finite() || !amplitude.is_finite() {
            return Err(Error::Parameter("bump center and amplitude must be finite".into()));
        }
        Ok(ForceProfile {
            shape: Shape::Bump {
                l0,
                center: center.rem_euclid(ring),
                amplitude,
            },
            ring,
        })
    }

    /// The canonical profile used throughout: unit peak, `L0 = 0.1`, centered at `L/2`.
    pub fn canonical(ring: f64) -> Self {
        ForceProfile::bump(0.1 * ring, 0.5 * ring, 1.0, ring).expect("canonical bump is valid")
    }

    pub fn table(xs: Vec<f64>, values: Vec<f64>, ring: f64) -> Result<Self> {
        check_ring(ring)?;
        if xs.first().is_some_and(|&x| x < 0.0) || xs.last().is_some_and(|&x| x >= ring) {
            return Err(Error::Config("custom-table knots must lie in [0, L)".into()));
        }
        Ok(ForceProfile {
            shape: Shape::Table(Spline::new(xs, values)?),
            ring,
        })
    }

    pub fn ring_length(&self) -> f64 {
        self.ring
    }

    pub fn is_zero(&self) -> bool {
        match &self.shape {
            Shape::Zero => true,
            Shape::Bump { amplitude, .. } => *amplitude == 0.0,
            Shape::Table(s) => s.values.iter().all(|&v| v == 0.0),
        }
    }

    /// Support arc `(start, length)`; `None` for the zero profile.
    pub fn support(&self) -> Option<(f64, f64)> {
        match &self.shape {
            Shape::Zero => None,
            Shape::Bump { l0, center, .. } => Some(((center - 0.5 * l0).rem_euclid(self.ring), *l0)),
            Shape::Table(s) => Some((s.xs[0], s.xs[s.xs.len() - 1] - s.xs[0])),
        }
    }

    /// Support length `L0` (0 for the zero profile).
    pub fn support_length(&self) -> f64 {
        self.support().map_or(0.0, |(_, l)| l)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let shape = match &self.shape {
            Shape::Zero => Shape::Zero,
            Shape::Bump {
                l0,
                center,
                amplitude,
            } => Shape::Bump {
                l0: *l0,
                center: *center,
                amplitude: amplitude * factor,
            },
            Shape::Table(s) => {
                let values: Vec<f64> = s.values.iter().map(|v| v * factor).collect();
                Shape::Table(Spline::new(s.xs.clone(), values).expect("scaled table stays valid"))
            }
        };
        ForceProfile {
            shape,
            ring: self.ring,
        }
    }

    /// `F^(m)(x)` for `m` in `{0, 1, 2}`, with `x` taken modulo `L`.
    pub fn eval(&self, x: f64, order: u32) -> Result<f64> {
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        Ok(self.derivs(x)[order as usize])
    }

    /// `F(x)`.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Bump {
                l0,
                center,
                amplitude,
            } => {
                let u = 2.0 * self.offset(x, *center) / l0;
                let q = 1.0 - u * u;
                if q <= 0.0 || 1.0 / q > 745.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / q).exp()
                }
            }
            Shape::Table(s) => {
                let x = x.rem_euclid(self.ring);
                s.segment(x).map_or(0.0, |i| s.local(i, x)[0])
            }
        }
    }

    /// `[F, F', F'']` at `x`.
    pub fn derivs(&self, x: f64) -> [f64; 3] {
        match &self.shape {
            Shape::Zero => [0.0; 3],
            Shape::Bump {
                l0,
                center,
                amplitude,
            } => {
                let scale = 2.0 / l0;
                let u = scale * self.offset(x, *center);
                let q = 1.0 - u * u;
                if q <= 0.0 || 1.0 / q > 745.0 {
                    return [0.0; 3];
                }
                let f = amplitude * (1.0 - 1.0 / q).exp();
                let q2 = q * q;
                let fu = f * (-2.0 * u / q2);
                let fuu = f * (4.0 * u * u / (q2 * q2) - (2.0 + 6.0 * u * u) / (q2 * q));
                [f, fu * scale, fuu * scale * scale]
            }
            Shape::Table(s) => {
                let x = x.rem_euclid(self.ring);
                match s.segment(x) {
                    Some(i) => {
                        let l = s.local(i, x);
                        [l[0], l[1], l[2]]
                    }
                    None => [0.0; 3],
                }
            }
        }
    }

    /// `F(a + y) - F(a)` without cancellation for small `y`.
    pub fn diff(&self, a: f64, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Bump {
                l0,
                center,
                amplitude,
            } => {
                let da = self.offset(a, *center);
                let db = da + y;
                let half = 0.5 * l0;
                if da.abs() >= half || db.abs() >= half || db.abs() >= 0.5 * self.ring {
                    return self.value(a + y) - self.value(a);
                }
                let ua = da / half;
                let du = y / half;
                let ub = ua + du;
                let qa = 1.0 - ua * ua;
                let qb = 1.0 - ub * ub;
                if 1.0 / qa > 745.0 && 1.0 / qb > 745.0 {
                    return 0.0;
                }
                let fa = amplitude * (1.0 - 1.0 / qa).exp();
                // h(ub) - h(ua) with h(u) = 1 - 1/(1 - u^2)
                let dh = -du * (ua + ub) / (qa * qb);
                fa * dh.exp_m1()
            }
            Shape::Table(s) => {
                let xa = a.rem_euclid(self.ring);
                let xb = xa + y;
                match (s.segment(xa), s.segment(xb)) {
                    (Some(i), Some(j)) if i == j => {
                        let l = s.local(i, xa);
                        y * (l[1] + y * (0.5 * l[2] + y * l[3] / 6.0))
                    }
                    _ => self.value(a + y) - self.value(a),
                }
            }
        }
    }

    /// Signed offset of `x` from `center`, reduced to `[-L/2, L/2)`.
    #[inline]
    fn offset(&self, x: f64, center: f64) -> f64 {
        let d = (x - center).rem_euclid(self.ring);
        if d >= 0.5 * self.ring {
            d - self.ring
        } else {
            d
        }
    }

    /// `∫_0^x F` for `x` in `[0, L]` (values outside are reduced modulo `L`
    /// with the full-ring integral added per winding).
    pub fn integral_to(&self, x: f64) -> f64 {
        let windings = (x / self.ring).floor();
        let r = x - windings * self.ring;
        let full = if windings != 0.0 { self.integral_over(0.0, self.ring) } else { 0.0 };
        windings * full + self.integral_over(0.0, r)
    }

    /// `∫_a^b F` for `0 <= a <= b <= L`, restricted to the support.
    fn integral_over(&self, a: f64, b: f64) -> f64 {
        let Some((start, len)) = self.support() else {
            return 0.0;
        };
        let f = |x: f64| self.value(x);
        // The support may wrap past L; integrate it as up to two pieces.
        let mut total = 0.0;
        let pieces = if start + len <= self.ring {
            vec![(start, start + len)]
        } else {
            vec![(start, self.ring), (0.0, start + len - self.ring)]
        };
        for (lo, hi) in pieces {
            let lo = lo.max(a);
            let hi = hi.min(b);
            if hi > lo {
                total += quad::integrate(f, lo, hi, 1e-13, 1e-300).0;
            }
        }
        total
    }

    /// `C(F, 0..2)`, `C(F, int)` and `C(F) = 6 C2 + 24 C1`.
    pub fn constants(&self) -> ForceConstants {
        let Some((start, len)) = self.support() else {
            return ForceConstants {
                c0: 0.0,
                c1: 0.0,
                c2: 0.0,
                c_int: 0.0,
                cf_combined: 0.0,
            };
        };
        let mut c = [0.0f64; 3];
        let h = len / DENSE_SAMPLES as f64;
        for (m, slot) in c.iter_mut().enumerate() {
            let g = |x: f64| self.derivs(x)[m].abs();
            let mut best_i = 0;
            let mut best = 0.0;
            for i in 0..=DENSE_SAMPLES {
                let v = g(start + i as f64 * h);
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            let center = start + best_i as f64 * h;
            *slot = best.max(golden_max(&g, center - h, center + h));
        }
        let c_int = self.integral_over(0.0, self.ring);
        ForceConstants {
            c0: c[0],
            c1: c[1],
            c2: c[2],
            c_int,
            cf_combined: 6.0 * c[2] + 24.0 * c[1],
        }
    }
}

/// Golden-section maximization of a unimodal `g` on `[a, b]`.
fn golden_max<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..80 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = g(x2);
        }
    }
    f1.max(f2)
}

/// `phi_k(t) = F(x_k(0) + V t) - F(x_k(0))`.
pub fn phi_k(f: &ForceProfile, eq: &EquilibriumConfig, v: f64, k: usize, t: f64) -> Result<f64> {
    let len = eq.len();
    if k >= len {
        return Err(Error::Index { index: k, len });
    }
    let x = eq.lab_position(k);
    Ok(f.value(x + v * t) - f.value(x))
}
