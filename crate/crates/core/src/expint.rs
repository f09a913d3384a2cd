//! Exact one-step propagator of a damped oscillator
//! `M eta'' + A eta' + M K eta = q(t)` with `q` linear on the step.
//!
//! With roots `z_{1,2}` of `z^2 + (A/M) z + K` the homogeneous flow of
//! `(eta, eta')` is a real 2x2 matrix even when the roots are a complex
//! pair, and the forcing enters through the exponential-integrator weights
//! `phi1(x) = (e^x - 1)/x` and `phi2(x) = (e^x - 1 - x)/x^2`.

use num_complex::Complex64;

/// Below this `|x|` the weight functions are summed as Taylor series.
const SERIES_RADIUS: f64 = 0.2;

fn series(x: Complex64, coef: impl Fn(u32) -> f64) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut pow = Complex64::new(1.0, 0.0);
    for k in 0..24 {
        sum += pow * coef(k);
        pow *= x;
    }
    sum
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |a, i| a * i as f64)
}

/// `(e^x - 1) / x`
pub fn phi1(x: Complex64) -> Complex64 {
    if x.norm() < SERIES_RADIUS {
        series(x, |k| 1.0 / factorial(k + 1))
    } else {
        x.exp_m1() / x
    }
}

/// `(e^x - 1 - x) / x^2`
pub fn phi2(x: Complex64) -> Complex64 {
    if x.norm() < SERIES_RADIUS {
        series(x, |k| 1.0 / factorial(k + 2))
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

/// `(e^x (x - 1) + 1) / x^2`
fn psi_a(x: Complex64) -> Complex64 {
    if x.norm() < SERIES_RADIUS {
        series(x, |k| (k + 1) as f64 / factorial(k + 2))
    } else {
        (x.exp() * (x - 1.0) + 1.0) / (x * x)
    }
}

/// `(e^x (x^2 - 2x + 2) - 2) / x^3`
fn psi_b(x: Complex64) -> Complex64 {
    if x.norm() < SERIES_RADIUS {
        series(x, |k| ((k + 2) * (k + 1)) as f64 / factorial(k + 3))
    } else {
        (x.exp() * (x * x - 2.0 * x + 2.0) - 2.0) / (x * x * x)
    }
}

trait ExpM1 {
    fn exp_m1(self) -> Self;
}

impl ExpM1 for Complex64 {
    /// `e^z - 1` accurate for small `|z|`.
    fn exp_m1(self) -> Complex64 {
        // e^(a+ib) - 1 = (e^a - 1) cos b + (cos b - 1) + i e^a sin b
        let (a, b) = (self.re, self.im);
        let em1 = a.exp_m1();
        let cm1 = -2.0 * (0.5 * b).sin().powi(2);
        Complex64::new(em1 * b.cos() + cm1, a.exp() * b.sin())
    }
}

/// Characteristic roots of `z^2 + (A/M) z + K`, evaluated without
/// cancellation. `beta = A / (2M)`, `disc = 1 - K / beta^2`.
pub fn char_roots(beta: f64, k: f64) -> (Complex64, Complex64, f64) {
    let disc = 1.0 - k / (beta * beta);
    if disc < 0.0 {
        let im = beta * (-disc).sqrt();
        (Complex64::new(-beta, -im), Complex64::new(-beta, im), disc)
    } else {
        let z1 = -beta * (1.0 + disc.sqrt());
        (Complex64::new(z1, 0.0), Complex64::new(k / z1, 0.0), disc)
    }
}

/// Relative discriminant below which the two roots are treated as one.
pub const DEGENERATE_DISC: f64 = 1e-14;

/// One step of length `h` for a single mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    /// Weights of `q(t0)` and `q(t0 + h)` on `eta`.
    pub b_eta: [f64; 2],
    /// Weights of `q(t0)` and `q(t0 + h)` on `eta'`.
    pub b_vel: [f64; 2],
}

impl Step {
    /// Propagator for `M eta'' + A eta' + M K eta = q`.
    pub fn new(m: f64, a: f64, k: f64, h: f64) -> Step {
        let beta = a / (2.0 * m);
        let (z1, z2, disc) = char_roots(beta, k);
        if disc.abs() < DEGENERATE_DISC {
            return Step::confluent(m, -beta, h);
        }
        let x1 = z1 * h;
        let x2 = z2 * h;
        let e1 = x1.exp();
        let e2 = x2.exp();
        let dz = z1 - z2;
        let a11 = (z1 * e2 - z2 * e1) / dz;
        let a12 = (e1 - e2) / dz;
        let a21 = -(z1 * z2) * (e1 - e2) / dz;
        let a22 = (z1 * e1 - z2 * e2) / dz;
        // Duhamel with r_1 = 1/(M (z1 - z2)) = -r_2.
        let r = 1.0 / (m * dz);
        let (p11, p21) = (phi1(x1), phi2(x1));
        let (p12, p22) = (phi1(x2), phi2(x2));
        let w0 = |c1: Complex64, c2: Complex64| (r * h * (c1 * (p11 - p21) - c2 * (p12 - p22))).re;
        let w1 = |c1: Complex64, c2: Complex64| (r * h * (c1 * p21 - c2 * p22)).re;
        let one = Complex64::new(1.0, 0.0);
        Step {
            a11: a11.re,
            a12: a12.re,
            a21: a21.re,
            a22: a22.re,
            b_eta: [w0(one, one), w1(one, one)],
            b_vel: [w0(z1, z2), w1(z1, z2)],
        }
    }

    fn confluent(m: f64, z: f64, h: f64) -> Step {
        let x = Complex64::new(z * h, 0.0);
        let e = (z * h).exp();
        let pa = psi_a(x).re;
        let pb = psi_b(x).re;
        Step {
            a11: e * (1.0 - z * h),
            a12: e * h,
            a21: -z * z * h * e,
            a22: e * (1.0 + z * h),
            b_eta: [h * h / m * pb, h * h / m * (pa - pb)],
            b_vel: [h / m * (pa + z * h * pb), h / m * (e - pa - z * h * pb)],
        }
    }

    /// Advances `(eta, eta')` of one mode given forcing at both step ends.
    #[inline]
    pub fn apply<T>(&self, eta: T, vel: T, q0: T, q1: T) -> (T, T)
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        (
            eta * self.a11 + vel * self.a12 + q0 * self.b_eta[0] + q1 * self.b_eta[1],
            eta * self.a21 + vel * self.a22 + q0 * self.b_vel[0] + q1 * self.b_vel[1],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64, y: f64) -> Complex64 {
        Complex64::new(x, y)
    }

    #[test]
    fn weights_continuous_across_series_radius() {
        for &x in &[c(0.1999999, 0.0), c(0.2000001, 0.0), c(0.0, 0.2), c(-0.15, 0.15)] {
            let direct1 = (x.exp() - 1.0) / x;
            let direct2 = (x.exp() - 1.0 - x) / (x * x);
            assert!((phi1(x) - direct1).norm() < 1e-12);
            assert!((phi2(x) - direct2).norm() < 1e-9);
        }
        assert_eq!(phi1(c(0.0, 0.0)), c(1.0, 0.0));
        assert_eq!(phi2(c(0.0, 0.0)), c(0.5, 0.0));
        assert!((psi_b(c(0.0, 0.0)).re - 1.0 / 3.0).abs() < 1e-15);
    }

    /// Reference by fine RK4 on the first-order system.
    fn rk4(m: f64, a: f64, k: f64, h: f64, q0: f64, q1: f64, eta: f64, vel: f64) -> (f64, f64) {
        let steps = 20000;
        let dt = h / steps as f64;
        let rhs = |t: f64, y: [f64; 2]| {
            let q = q0 + (q1 - q0) * t / h;
            [y[1], (q - a * y[1]) / m - k * y[0]]
        };
        let mut y = [eta, vel];
        for i in 0..steps {
            let t = i as f64 * dt;
            let k1 = rhs(t, y);
            let k2 = rhs(t + dt / 2.0, [y[0] + dt / 2.0 * k1[0], y[1] + dt / 2.0 * k1[1]]);
            let k3 = rhs(t + dt / 2.0, [y[0] + dt / 2.0 * k2[0], y[1] + dt / 2.0 * k2[1]]);
            let k4 = rhs(t + dt, [y[0] + dt * k3[0], y[1] + dt * k3[1]]);
            for j in 0..2 {
                y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        (y[0], y[1])
    }

    #[test]
    fn matches_rk4_in_all_root_regimes() {
        // complex pair, real pair, zero mode, double root
        let cases = [(1.0, 0.5, 4.0), (1.0, 5.0, 2.0), (2.0, 0.8, 0.0), (1.0, 2.0, 1.0)];
        for &(m, a, k) in &cases {
            let st = Step::new(m, a, k, 0.7);
            let got = st.apply(0.3, -0.2, 1.5, -0.5);
            let want = rk4(m, a, k, 0.7, 1.5, -0.5, 0.3, -0.2);
            assert!((got.0 - want.0).abs() < 1e-11, "{m} {a} {k}: {got:?} vs {want:?}");
            assert!((got.1 - want.1).abs() < 1e-11, "{m} {a} {k}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn stiff_mode_is_stable() {
        // |z| h far beyond any explicit stability limit
        let st = Step::new(1e-6, 1e-3, 1e8, 1.0);
        let (mut e, mut v) = (1.0, 0.0);
        for _ in 0..100 {
            (e, v) = st.apply(e, v, 1e-3, 1e-3);
        }
        let steady = 1e-3 / (1e-6 * 1e8);
        assert!((e - steady).abs() < 1e-12 * steady.max(1.0));
        assert!(v.abs() < 1e-9);
    }
}
