//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use ringflow::equilibrium::{self, EquilibriumConfig};
use ringflow::forcefield::ForceProfile;
use ringflow::params::{SystemParams, DEFAULT_RHO, DESK_EXPONENTS};

pub struct Desk {
    pub p: SystemParams,
    pub eq: EquilibriumConfig,
    pub f: ForceProfile,
}

/// Feasible exponent instance with the canonical bump and calibrated friction.
pub fn desk(n: usize) -> Desk {
    let p = DESK_EXPONENTS.instantiate(n, DEFAULT_RHO, 1.0).unwrap();
    let f = ForceProfile::canonical(1.0);
    let eq = equilibrium::solve(&p, &f).unwrap();
    Desk { p: p.calibrate_friction(eq.w), eq, f }
}

/// Small ring with `g Delta^2 / alpha` around `1e-3`, so the equilibrium is
/// visibly deformed.
pub fn moderate(n: usize) -> (SystemParams, ForceProfile) {
    let p = SystemParams {
        n,
        l: 1.0,
        m: 1.0,
        alpha: 1.0,
        g: 0.8,
        a0: 0.0,
        a: 1.0,
        v: 1.0,
        rho: DEFAULT_RHO,
        beta: 0.01,
    };
    (p, ForceProfile::bump(0.3, 0.4, 1.0, 1.0).unwrap())
}

/// Minimizer of `sum alpha / Delta_k + sum W(x_k)` by block coordinate descent.
///
/// Positions are `x_k = s + k Delta + Delta z_k` with `z_0 = 0`. The shape
/// block `z_1..z_{N-1}` is relaxed by SOR with a per-coordinate Newton step
/// on the scaled gradient, and the rotation `s` descends from the uniform
/// start `s = 0` along `dE/ds` until it brackets a minimum, which is then
/// bisected. Plain single-coordinate descent cannot resolve the rotation:
/// its curvature is smaller than the lattice stiffness by many orders.
pub struct Minimizer {
    pub offset: f64,
    pub positions: Vec<f64>,
    pub sweeps: usize,
}

struct Energy<'a> {
    f: &'a ForceProfile,
    n: usize,
    delta: f64,
    c: f64,
    psi0: f64,
}

impl Energy<'_> {
    /// `(Delta^2 / alpha) dE/dx_k`, written without cancellation.
    fn grad(&self, s: f64, z: &[f64], k: usize) -> f64 {
        let n = self.n;
        let zk = z[k];
        let a = z[(k + 1) % n] - zk;
        let b = zk - z[(k + n - 1) % n];
        // (1+a)^-2 - (1+b)^-2
        let inv = (b - a) * (2.0 + a + b) / ((1.0 + a).powi(2) * (1.0 + b).powi(2));
        let x = s + k as f64 * self.delta + self.delta * zk;
        inv - self.c * (self.f.value(x.rem_euclid(self.f.ring_length())) - self.psi0)
    }

    fn relax(&self, s: f64, z: &mut [f64], tol: f64) -> usize {
        let n = self.n;
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / n as f64).sin());
        for sweep in 1..=200_000 {
            let mut change = 0.0f64;
            for k in 1..n {
                let a = z[(k + 1) % n] - z[k];
                let b = z[k] - z[k - 1];
                let curv = 2.0 / (1.0 + a).powi(3) + 2.0 / (1.0 + b).powi(3);
                let step = omega * self.grad(s, z, k) / curv;
                z[k] -= step;
                change = change.max(step.abs());
            }
            if change <= tol {
                return sweep;
            }
        }
        panic!("SOR did not converge");
    }
}

pub fn minimize(p: &SystemParams, f: &ForceProfile) -> Minimizer {
    let n = p.n;
    let delta = p.l / n as f64;
    let w = equilibrium::compute_w(f, p.g, p.l);
    let e = Energy {
        f,
        n,
        delta,
        c: p.g * delta * delta / p.alpha,
        psi0: w / p.g,
    };
    let scale = e.c * f.constants().c0.max(1e-300);
    let tol = 1e-13 * scale;
    let mut z = vec![0.0; n];
    let mut sweeps = 0;
    let slope = |s: f64, z: &mut Vec<f64>, sweeps: &mut usize| {
        *sweeps += e.relax(s, z, tol);
        e.grad(s, z, 0)
    };
    // Descend from the uniform start.
    let h = delta / 32.0;
    let mut s0 = 0.0;
    let mut d0 = slope(s0, &mut z, &mut sweeps);
    let dir = -d0.signum();
    let mut s1;
    loop {
        s1 = s0 + dir * h;
        let d1 = slope(s1, &mut z, &mut sweeps);
        if d1.signum() != d0.signum() {
            break;
        }
        s0 = s1;
        d0 = d1;
        assert!((s0.abs()) < 2.0 * p.l, "no minimum along the rotation");
    }
    let (mut lo, mut hi) = if s0 < s1 { (s0, s1) } else { (s1, s0) };
    let d_lo_sign = slope(lo, &mut z, &mut sweeps).signum();
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if slope(mid, &mut z, &mut sweeps).signum() == d_lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    slope(s, &mut z, &mut sweeps);
    Minimizer {
        offset: s,
        positions: (0..n).map(|k| s + k as f64 * delta + delta * z[k]).collect(),
        sweeps,
    }
}

/// `max_k |a_k - b_k|` after aligning labels and the ring wrap.
pub fn position_distance(a: &[f64], b: &[f64], ring: f64) -> f64 {
    let n = a.len() as i64;
    let delta = ring / n as f64;
    let shift = ((b[0] - a[0]) / delta).round() as i64;
    (0..n)
        .map(|k| {
            let m = k - shift;
            let b_ext = b[m.rem_euclid(n) as usize] + m.div_euclid(n) as f64 * ring;
            (b_ext - a[k as usize]).abs()
        })
        .fold(0.0, f64::max)
}
