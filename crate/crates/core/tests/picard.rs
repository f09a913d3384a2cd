mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ringflow::dynamics::{self, SimOptions, TimeGrid};
use ringflow::picard;
use ringflow::spectral::{self, ModeField};

fn grid(d: &common::Desk, horizon_damps: f64, steps: usize) -> TimeGrid {
    let td = d.p.derived().t_damp;
    TimeGrid::new(horizon_damps * td / steps as f64, steps).unwrap()
}

/// Real field occupying modes `n0` and `N - n0` with amplitude `a sin(pi t / T)`.
fn single_mode(d: &common::Desk, g: TimeGrid, n0: usize, a: f64) -> ModeField {
    let mut h = ModeField::zeros(&d.p, g);
    let n = d.p.n;
    for i in 0..g.len() {
        let s = (std::f64::consts::PI * g.time(i) / g.horizon()).sin();
        let row = h.row_mut(i);
        row[n0] = Complex64::new(a * s, 0.5 * a * s);
        row[n - n0] = row[n0].conj();
    }
    h
}

#[test]
fn k1_linearization_remainder_is_quadratic() {
    let d = common::desk(64);
    let g = grid(&d, 5.0, 400);
    let base = 1e-3 * d.p.delta();
    let rem = |a: f64| {
        let h = single_mode(&d, g, 3, a);
        let k1 = picard::apply_k_parts(&d.p, &d.eq, &d.f, &h).unwrap().k1;
        let lin = picard::apply_k1_linear(&d.p, &d.eq, &d.f, &h).unwrap();
        picard::bt_norm(&k1.sub(&lin))
    };
    let r: Vec<f64> = (0..4).map(|j| rem(base / 2f64.powi(j))).collect();
    for w in r.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "{r:?}");
    }
}

#[test]
fn fixed_point_matches_full_ode() {
    let d = common::desk(64);
    let g = grid(&d, 20.0, 4000);
    let eta = picard::free_term(&d.p, &d.eq, &d.f, g).unwrap();
    let st = picard::solve_fixed_point(&d.p, &d.eq, &d.f, &eta, 1e-12, 50).unwrap();
    assert!(st.converged && st.ball_invariant);
    assert!(st.residual <= 1e-8 * st.eta_norm);
    let opts = SimOptions { sample_every: 1, ..Default::default() };
    let full = dynamics::simulate_full_with(&d.p, &d.eq, &d.f, g.horizon(), g.steps, &opts).unwrap();
    let err = st.deviations().unwrap().relative_linf_error(&full.deviations).unwrap();
    assert!(err <= 1e-4, "{err:e}");
}

#[test]
fn tolerance_halving_costs_at_most_one_iteration_per_halving() {
    let d = common::desk(64);
    let g = grid(&d, 20.0, 1000);
    let eta = picard::free_term(&d.p, &d.eq, &d.f, g).unwrap();
    let iters: Vec<usize> = (0..6)
        .map(|j| {
            let tol = 1e-6 / 2f64.powi(4 * j);
            let st = picard::solve_fixed_point(&d.p, &d.eq, &d.f, &eta, tol, 50).unwrap();
            assert!(st.converged);
            st.iterations
        })
        .collect();
    for (j, it) in iters.iter().enumerate() {
        assert!(*it <= iters[0] + 1 + 4 * j, "{iters:?}");
    }
    assert!(iters.windows(2).all(|w| w[1] >= w[0]));
}

/// Least-squares slope of `log env(t)` against `log t` for `t >= t0`.
fn loglog_slope(times: &[f64], values: &[f64], t0: f64) -> f64 {
    let mut env = 0.0f64;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter_map(|(&t, &v)| {
            env = env.max(v);
            (t >= t0 && env > 0.0).then(|| (t.ln(), env.ln()))
        })
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    num / den
}

#[test]
fn zero_mode_growth_is_at_most_linear() {
    let d = common::desk(64);
    let td = d.p.derived().t_damp;
    let g = grid(&d, 20.0, 2000);
    let eta = picard::free_term(&d.p, &d.eq, &d.f, g).unwrap();
    let st = picard::solve_fixed_point(&d.p, &d.eq, &d.f, &eta, 1e-12, 50).unwrap();
    let b0: Vec<f64> = st.h.mode(0).iter().map(|b| b.norm()).collect();
    let slope = loglog_slope(&g.times(), &b0, td);
    assert!(slope <= 1.25, "{slope}");

    // Forcing with a non-zero mean drives the secular (t + 1)-type drift.
    let q = vec![Complex64::new(d.p.g, 0.0); g.len()];
    let b = spectral::mode_solution(&d.p, 0, &q, g).unwrap();
    let mag: Vec<f64> = b.iter().map(|v| v.norm()).collect();
    let slope = loglog_slope(&g.times(), &mag, 10.0 * td);
    assert!((0.75..=1.25).contains(&slope), "{slope}");
}

#[test]
fn contraction_probe_is_reproducible() {
    let d = common::desk(64);
    let g = grid(&d, 20.0, 500);
    let eta = picard::free_term(&d.p, &d.eq, &d.f, g).unwrap();
    let gamma = 2.0 * picard::bt_norm(&eta);
    let a = picard::contraction_probe(&d.p, &d.eq, &d.f, &eta, gamma, 20, 9).unwrap();
    let b = picard::contraction_probe(&d.p, &d.eq, &d.f, &eta, gamma, 20, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.q < 1.0);
    assert_eq!(a.images_in_ball, a.images_checked);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bt_norm_is_a_norm(seed in any::<u64>(), r1 in 1e-12f64..1.0, r2 in 1e-12f64..1.0, c in -10.0f64..10.0) {
        let d = common::desk(16);
        let g = grid(&d, 1.0, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = picard::random_field(&d.p, g, r1, &mut rng);
        let b = picard::random_field(&d.p, g, r2, &mut rng);
        let na = picard::bt_norm(&a);
        prop_assert!((na - r1).abs() <= 1e-12 * r1);
        let sum = picard::bt_norm(&a.add(&b));
        prop_assert!(sum <= (na + picard::bt_norm(&b)) * (1.0 + 1e-14));
        let scaled = picard::bt_norm(&a.scale(c));
        prop_assert!((scaled - c.abs() * na).abs() <= 1e-14 * na * c.abs().max(1.0));
    }
}
