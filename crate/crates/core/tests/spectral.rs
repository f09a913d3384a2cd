mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use ringflow::diagnostics::{count_in, dyadic_windows};
use ringflow::dynamics::{l3_series, residual_terms};
use ringflow::params::{check_conditions, SystemParams};
use ringflow::spectral::{self, dft, idft, Fourier};

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

fn ring_params(n: usize, m: f64, alpha: f64, a: f64) -> SystemParams {
    SystemParams {
        n,
        l: 1.0,
        m,
        alpha,
        g: 0.0,
        a0: 0.0,
        a,
        v: 1.0,
        rho: 0.01,
        beta: 0.01,
    }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn transform_round_trip_and_parseval(h in prop::collection::vec(-1e3f64..1e3, 3..130)) {
        let n = h.len() as f64;
        let b = dft(&h);
        let back = idft(&b);
        let scale = h.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        for (x, y) in h.iter().zip(&back) {
            prop_assert!((x - y.re).abs() <= 1e-12 * scale);
            prop_assert!(y.im.abs() <= 1e-12 * scale);
        }
        let e_phys: f64 = h.iter().map(|x| x * x).sum();
        let e_mode: f64 = b.iter().map(|c| c.norm_sqr()).sum::<f64>() * n;
        prop_assert!((e_phys - e_mode).abs() <= 1e-12 * e_phys.max(1.0));
        // real input: b(N - n) = conj b(n)
        let len = b.len();
        for m in 1..len {
            prop_assert!((b[m] - b[len - m].conj()).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn direct_and_fast_paths_agree(bits in 2u32..9, seed in any::<u64>()) {
        let n = 1usize << bits;
        let h: Vec<Complex64> = (0..n)
            .map(|k| {
                let x = (seed.wrapping_mul(6364136223846793005).wrapping_add((k as u64).wrapping_mul(1442695040888963407)) >> 11) as f64;
                Complex64::new((x * 1e-15).sin(), (x * 1e-15).cos())
            })
            .collect();
        let fast = Fourier::new(n).dft_complex(&h).unwrap();
        let slow: Vec<Complex64> = (0..n)
            .map(|m| {
                h.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (k, v)| {
                    acc + v * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (m * k % n) as f64 / n as f64)
                }) / n as f64
            })
            .collect();
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).norm() <= 1e-13);
        }
    }

    #[test]
    fn roots_satisfy_vieta(n in 3usize..200, m in 1e-9f64..1.0, alpha in 1e-6f64..1.0, a in 1e-6f64..1.0) {
        let p = ring_params(n, m, alpha, a);
        for r in spectral::all_roots(&p) {
            let s = r.z1 + r.z2;
            let prod = r.z1 * r.z2;
            let tr = a / m;
            prop_assert!((s + tr).norm() <= 1e-9 * tr);
            prop_assert!((prod - r.stiffness).norm() <= 1e-9 * (r.stiffness + tr * tr));
        }
    }

    #[test]
    fn roots_complex_entry_matches_every_mode(n in 3usize..200, m in 1e-6f64..1.0, alpha in 1e-4f64..1.0, a in 1e-4f64..1.0) {
        let p = ring_params(n, m, alpha, a);
        let rep = check_conditions(&p, 0.0).unwrap();
        let entry = rep.get("roots_complex").unwrap();
        let roots = spectral::all_roots(&p);
        let all_complex = roots[1..].iter().all(|r| r.disc < 0.0);
        // margins within rounding of 1 are undecidable either way
        if (entry.margin - 1.0).abs() > 1e-9 {
            prop_assert_eq!(entry.satisfied, all_complex);
        }
    }

    /// Between the printed root condition and the exact one, the softest
    /// mode has real roots although the printed condition holds.
    #[test]
    fn printed_root_condition_admits_real_roots(n in 8usize..4096, frac in 0.05f64..0.95) {
        let lo = 1.0 / (16.0 * (2.0 * std::f64::consts::PI).powi(2));
        let exact = 1.0 / (8.0 * n as f64 * n as f64 * (std::f64::consts::PI / n as f64).sin().powi(2) * 4.0);
        prop_assume!(exact > lo * (1.0 + 1e-6));
        let ratio = lo + frac * (exact - lo);
        // M alpha N / A^2 = ratio with alpha = A = 1
        let p = ring_params(n, ratio / n as f64, 1.0, 1.0);
        let rep = check_conditions(&p, 0.0).unwrap();
        prop_assert!(rep.get("cond_roots").unwrap().satisfied);
        prop_assert!(!rep.get("roots_complex").unwrap().satisfied);
        prop_assert!(!spectral::roots(&p, 1).complex);
    }

    #[test]
    fn l3_series_matches_closed_form(seed in any::<u64>(), amp in 1e-6f64..0.1, n in prop::sample::select(vec![16usize, 64])) {
        let d = common::desk(n);
        let delta = d.p.delta();
        let y: Vec<f64> = (0..n)
            .map(|k| {
                let x = seed.rotate_left((k % 64) as u32) ^ (k as u64).wrapping_mul(0x9E3779B97F4A7C15);
                amp * delta * (((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5)
            })
            .collect();
        let closed = residual_terms(&d.p, &d.eq, &d.f, &y, 0.0).unwrap().l3;
        let series = l3_series(&d.p, &d.eq, &y, 60).unwrap();
        let scale = closed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in closed.iter().zip(&series) {
            prop_assert!((a - b).abs() <= 1e-12 * scale, "{a:e} vs {b:e}");
        }
    }

    #[test]
    fn lattice_counts_are_exact(blocks in 1usize..40, frac in 0.001f64..0.999) {
        let n = 16 * blocks;
        let delta = 1.0 / n as f64;
        let xs: Vec<f64> = (0..n).map(|k| (k as f64 + frac) * delta).collect();
        for w in dyadic_windows(1.0) {
            let expected = (w.len * n as f64).round() as usize;
            prop_assert_eq!(count_in(&w, 1.0, &xs), expected);
        }
    }

    #[test]
    fn disjoint_windows_partition_any_configuration(xs in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let ws = dyadic_windows(1.0);
        for j in 1..=4u32 {
            let len = 1.0 / f64::from(1u32 << j);
            let total: usize = ws
                .iter()
                .filter(|w| w.len == len)
                .enumerate()
                .filter(|(i, _)| i % 2 == 0)
                .map(|(_, w)| count_in(w, 1.0, &xs))
                .sum();
            prop_assert_eq!(total, xs.len());
        }
    }
}

#[test]
fn l3_series_rejects_large_fields() {
    let d = common::desk(16);
    let mut y = vec![0.0; 16];
    y[3] = 1.5 * d.p.delta();
    assert!(l3_series(&d.p, &d.eq, &y, 10).is_err());
}
