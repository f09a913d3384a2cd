mod common;

use std::f64::consts::PI;

use ringflow::dynamics::*;
use ringflow::equilibrium;
use ringflow::forcefield::ForceProfile;
use ringflow::spectral::dft;

fn every_step() -> SimOptions {
    SimOptions { sample_every: 1, ..Default::default() }
}

#[test]
fn energy_bookkeeping_per_damping_time() {
    let d = common::desk(64);
    let td = d.p.derived().t_damp;
    let periods = 2.0;
    let tr = simulate_full_with(&d.p, &d.eq, &d.f, periods * td, 2000, &every_step()).unwrap();
    let eb = energy_balance(&d.p, &d.eq, &d.f, &tr.deviations).unwrap();
    assert!(eb.energy_change != 0.0);
    let per_period = eb.relative_defect / periods;
    assert!(per_period <= 1e-6, "{eb:?}");
}

#[test]
fn consistency_defect_converges_at_second_order() {
    let d = common::desk(64);
    let td = d.p.derived().t_damp;
    let defects: Vec<f64> = [2000usize, 4000, 8000]
        .iter()
        .map(|&steps| {
            let tr = simulate_full_with(&d.p, &d.eq, &d.f, 2.0 * td, steps, &every_step()).unwrap();
            let c = consistency_identity(&d.p, &d.eq, &d.f, &tr.deviations, false).unwrap();
            assert!(c.algebraic_defect <= 1e-8 * c.scale, "{c:?}");
            c.fd_defect
        })
        .collect();
    for w in defects.windows(2) {
        assert!(w[0] >= 2.0 * w[1], "{defects:?}");
    }
}

#[test]
fn single_mode_forcing_stays_in_its_modes() {
    let d = common::desk(64);
    let n = d.p.n;
    let td = d.p.derived().t_damp;
    let amp = d.p.g * d.f.constants().c0;
    let grid = TimeGrid::new(2.0 * td / 400.0, 400).unwrap();
    for n0 in [1usize, 5, 17, 32] {
        let opts = SimOptions { integrator: Integrator::Dopri, sample_every: 1, ..Default::default() };
        let tr = simulate_linear_forcing(&d.p, &d.eq, &d.f, grid, &opts, |t, k| {
            amp * (2.0 * PI * (k * n0) as f64 / n as f64).cos() * (t / td).sin()
        })
        .unwrap();
        let mut inside = 0.0f64;
        let mut leak = 0.0f64;
        for y in &tr.y {
            for (m, b) in dft(y).iter().enumerate() {
                if m == 0 || m == n0 || m == n - n0 {
                    inside = inside.max(b.norm());
                } else {
                    leak = leak.max(b.norm());
                }
            }
        }
        assert!(inside > 0.0);
        assert!(leak <= 1e-12 * inside, "n0 = {n0}: {leak:e} vs {inside:e}");
    }
}

#[test]
fn no_force_means_no_response() {
    let (mut p, _) = common::moderate(32);
    p.g = 0.0;
    let f = ForceProfile::zero(1.0).unwrap();
    let eq = equilibrium::solve(&p, &f).unwrap();
    let p = p.calibrate_friction(eq.w);
    let td = p.derived().t_damp;
    let lin = simulate_linear_cutoff(&p, &eq, &f, td, 200).unwrap();
    assert_eq!(lin.max_abs_y(), 0.0);
    for integrator in [Integrator::ExpSplit, Integrator::Dopri] {
        let opts = SimOptions { integrator, ..Default::default() };
        let tr = simulate_full_with(&p, &eq, &f, td, 200, &opts).unwrap();
        assert_eq!(tr.deviations.max_abs_y(), 0.0, "{integrator:?}");
    }
}

#[test]
fn desk_run_stays_near_rigid_rotation() {
    let d = common::desk(64);
    let td = d.p.derived().t_damp;
    let tr = simulate_full(&d.p, &d.eq, &d.f, 10.0 * td, 5000).unwrap();
    let delta = d.p.delta();
    assert!(tr.deviations.max_abs_y() <= delta);
    assert!(!tr.meta.window_exit);
    assert!(tr.meta.min_gap_ratio > 0.0);
    for x in &tr.positions {
        assert!(x.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn integrators_agree_on_full_model() {
    let d = common::desk(64);
    let td = d.p.derived().t_damp;
    let exp = simulate_full(&d.p, &d.eq, &d.f, 5.0 * td, 5000).unwrap();
    let opts = SimOptions { integrator: Integrator::Dopri, ..Default::default() };
    let rk = simulate_full_with(&d.p, &d.eq, &d.f, 5.0 * td, 5000, &opts).unwrap();
    let err = exp.deviations.relative_linf_error(&rk.deviations).unwrap();
    assert!(err <= 1e-4, "{err:e}");
}

#[test]
fn stepping_is_deterministic() {
    let d = common::desk(64);
    let td = d.p.derived().t_damp;
    let a = simulate_full(&d.p, &d.eq, &d.f, td, 500).unwrap();
    let b = simulate_full(&d.p, &d.eq, &d.f, td, 500).unwrap();
    assert_eq!(a, b);
}
