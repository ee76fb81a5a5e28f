use kgqp::cocycle;
use kgqp::dispersion;
use kgqp::evolve::{self, LinearPropagator, RealState};
use kgqp::kam;
use kgqp::model::{self, FrequencyVector, LatticeConfig, QuasiPeriodicPotential};
use kgqp::operator::{build_finite_section, eigendecompose};
use kgqp::spectral;
use proptest::prelude::*;

fn cosine(eps: f64) -> QuasiPeriodicPotential {
    QuasiPeriodicPotential::cosine(1, eps, 0.01).unwrap()
}

fn two_mode(a: f64, b: f64) -> QuasiPeriodicPotential {
    QuasiPeriodicPotential::new(1, 0.01, [(vec![1], a), (vec![-1], a), (vec![2], b), (vec![-2], b)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn potential_is_even_in_mode_and_bounded(a in -0.05f64..0.05, b in -0.05f64..0.05, th in 0.0f64..1.0) {
        let p = two_mode(a, b);
        let v = p.eval(&[th]).unwrap();
        prop_assert!(v.abs() <= model::strip_norm(&p) + 1e-15);
        let mirrored = p.eval(&[1.0 - th]).unwrap();
        prop_assert!((v - mirrored).abs() < 1e-14);
    }

    #[test]
    fn section_spectrum_stays_in_band(eps in 0.0f64..0.2, n in 3usize..80, th in 0.0f64..1.0) {
        let p = cosine(eps.max(1e-12));
        let lat = LatticeConfig::new(n, vec![th]).unwrap();
        let h = build_finite_section(&p, &FrequencyVector::golden(), &lat).unwrap();
        let e0 = model::strip_norm(&p);
        for x in h.diagonal() {
            prop_assert!(x.abs() <= e0 + 1e-15);
        }
        let d = eigendecompose(&h).unwrap();
        prop_assert!(d.reconstruction_defect(&h) <= 1e-10 * (2.0 + e0));
        prop_assert!(d.orthogonality_defect() <= 1e-10);
        prop_assert!(d.values().iter().all(|e| e.abs() <= 2.0 + e0 + 1e-12));
        prop_assert!(d.values().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn linear_flow_conserves_energy(eps in 0.0f64..0.3, t in 0.0f64..200.0, site in 0usize..40) {
        let p = cosine(eps.max(1e-12));
        let lat = LatticeConfig::new(40, vec![0.2]).unwrap();
        let h = build_finite_section(&p, &FrequencyVector::golden(), &lat).unwrap();
        let d = eigendecompose(&h).unwrap();
        let prop = LinearPropagator::new(&d).unwrap();
        let s0 = RealState::delta(40, site);
        let s = prop.propagate(&s0, t).unwrap();
        let e0 = evolve::section_energy(&s0, &h, 0.0, 3).linear_energy;
        let e1 = evolve::section_energy(&s, &h, 0.0, 3).linear_energy;
        prop_assert!(e1 >= 0.0);
        prop_assert!((e1 - e0).abs() <= 1e-11 * e0);
        let back = prop.propagate(&s, -t).unwrap();
        for (x, y) in back.u.iter().zip(&s0.u) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn complex_variables_round_trip(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let lat = LatticeConfig::new(24, vec![0.0]).unwrap();
        let h = build_finite_section(&cosine(0.05), &FrequencyVector::golden(), &lat).unwrap();
        let d = eigendecompose(&h).unwrap();
        let u: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = RealState::new(u, v).unwrap();
        let back = evolve::from_complex(&evolve::to_complex(&s, &d).unwrap(), &d).unwrap();
        for (x, y) in back.u.iter().zip(&s.u).chain(back.v.iter().zip(&s.v)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_matrices_are_unimodular(e in -3.0f64..3.0, eps in 0.0f64..0.5, th in 0.0f64..1.0) {
        let m = cocycle::transfer_matrix(e, &cosine(eps.max(1e-12)), &[th]).unwrap();
        prop_assert!((m.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_rotation_number_matches_arccos(e in -1.95f64..1.95) {
        let w = FrequencyVector::golden();
        let rho = cocycle::rotation_number(e, &QuasiPeriodicPotential::zero(1), &w, &[0.0], 20_000).unwrap();
        prop_assert!((rho - (-e / 2.0).acos()).abs() < 1e-3);
    }

    #[test]
    fn schedule_is_monotone(eps0 in 1e-8f64..0.5, sigma in 0.001f64..0.2, j_max in 1usize..6, n_min in 1u32..40) {
        let s = kam::make_schedule(eps0, sigma, j_max, n_min).unwrap();
        prop_assert!(s.eps.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(s.n.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(s.n_eff.iter().all(|&n| n >= n_min));
    }

    #[test]
    fn resonance_distance_is_periodic(xi in -10.0f64..10.0, m in -5i32..5) {
        let a = kam::dist_mod_pi(xi);
        let b = kam::dist_mod_pi(xi + m as f64 * std::f64::consts::PI);
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a <= std::f64::consts::FRAC_PI_2 + 1e-15);
    }

    #[test]
    fn power_law_fit_recovers_exponent(alpha in -1.5f64..-0.1, c in 0.1f64..10.0) {
        let t = kgqp::quadrature::log_space(1.0, 1e3, 40);
        let y: Vec<f64> = t.iter().map(|t| c * dispersion::bracket(*t).powf(alpha)).collect();
        let fit = dispersion::fit_power_law(&t, &y, 1.0, 1e3).unwrap();
        prop_assert!((fit.exponent - alpha).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reduction_keeps_rotation_number(e in -1.8f64..1.8) {
        let w = FrequencyVector::golden();
        let p = cosine(1e-4);
        let s = kam::make_schedule(model::strip_norm(&p), 0.005, 3, 20).unwrap();
        let r = kam::reduce(e, &p, &w, &s).unwrap();
        let det = r.state.a[0][0] * r.state.a[1][1] - r.state.a[0][1] * r.state.a[1][0];
        prop_assert!((det - 1.0).abs() < 1e-12);
        prop_assert!(r.residual < 1e-10);
        let rho = cocycle::rotation_number(e, &p, &w, &[0.0], 100_000).unwrap();
        prop_assert!(kam::angle_distance(r.rho_j, rho) < 1e-3);
    }

    #[test]
    fn bloch_waves_solve_the_recurrence(e in -1.8f64..1.8) {
        let w = FrequencyVector::golden();
        let p = cosine(1e-3);
        let s = kam::make_schedule(model::strip_norm(&p), 0.005, 3, 20).unwrap();
        let r = kam::reduce(e, &p, &w, &s).unwrap();
        prop_assume!(r.state.elliptic && r.residual < 1e-10);
        let wave = spectral::bloch_wave(&r, &p, &[0.0], -15..16).unwrap();
        prop_assert!(wave.recurrence_residual < 1e-8);
        prop_assert!(wave.rho_prime > 0.0);
    }
}
