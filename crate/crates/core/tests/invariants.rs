use magcool_core::baselines::{
    default_sideband_grid, effective_two_mode, raman_time_limit, sideband_sweep, sideband_time_limit,
};
use magcool_core::env::DEFAULT_DT;
use magcool_core::oracle::{evolve_qme, lindblad_rhs, build_hamiltonian, DensityMatrix, FockConfig, Tolerances};
use magcool_core::{
    adiabatic_elimination, bose_occupancy, build_generators, from_periods, propagate, steady_state,
    thermal_covariance, BipartiteParams, Complex64, ControlSchedule, CovarianceState, SystemSpec, TripartiteParams,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn bipartite(detuning: f64, kappa_m: f64, n_m: f64, n_t: f64) -> SystemSpec {
    BipartiteParams {
        magnon_detuning: detuning,
        magnon_damping: kappa_m,
        magnon_bath: n_m,
        phonon_bath: n_t,
        ..BipartiteParams::default()
    }
    .build()
    .unwrap()
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

#[test]
fn zero_coupling_keeps_thermal_state_for_100_periods() {
    for sys in [
        bipartite(1.0, 0.1, 0.3, 100.0),
        TripartiteParams::auxiliary().build().unwrap(),
    ] {
        let gen = build_generators(&sys, &vec![Complex64::new(0.0, 0.0); sys.n_control_slots]).unwrap();
        let s0 = thermal_covariance(&sys);
        let mut s = s0.clone();
        for _ in 0..1000 {
            s = propagate(&s, &gen, DEFAULT_DT).unwrap();
        }
        assert!((&s.sigma - &s0.sigma).amax() < 1e-8 * s0.sigma.amax(), "{}", (&s.sigma - &s0.sigma).amax());
    }
}

#[test]
fn red_sideband_steady_state_matches_long_propagation() {
    let sys = bipartite(1.0, 0.1, 0.0, 100.0);
    let gen = build_generators(&sys, &[Complex64::new(0.05, 0.0)]).unwrap();
    let ss = steady_state(&gen).unwrap();
    let residual = &gen.drift * &ss.sigma + &ss.sigma * gen.drift.transpose() + &gen.diffusion;
    assert!(residual.amax() < 1e-10 * gen.diffusion.amax(), "{}", residual.amax());
    let long = propagate(&thermal_covariance(&sys), &gen, from_periods(200.0)).unwrap();
    assert!(max_rel(&long.sigma, &ss.sigma) < 1e-4);
    let n = long.occupancies()[1];
    let n_ss = ss.occupancies()[1];
    assert!(((n - n_ss) / n_ss).abs() < 1e-4, "{n} vs {n_ss}");
}

#[test]
fn thermal_limit_of_bose_occupancy() {
    // kT/ħω − 1/2 + ħω/(12kT) for ħω/kT = 1e-3
    let expected = 1000.0 - 0.5 + 1e-3 / 12.0;
    let n = bose_occupancy(1e-3, 1.0).unwrap();
    assert!((n - expected).abs() < 1e-8, "{n}");
}

#[test]
fn elimination_approaches_bare_values_as_cavity_loss_grows() {
    let j = Complex64::new(0.3, -0.2);
    let mut last = f64::INFINITY;
    for k in 0..12 {
        let kappa_a = 2f64.powi(k);
        let (d, kap) = adiabatic_elimination(1.2, 0.4, kappa_a, 0.05, j).unwrap();
        let gap = (d - 1.2).abs() + (kap - 0.05).abs();
        assert!(gap < last, "κ_a = {kappa_a}: {gap} after {last}");
        last = gap;
    }
    assert!(last < 1e-3);
}

#[test]
fn sideband_time_limit_shrinks_as_target_loosens() {
    let sys = bipartite(1.0, 0.1, 0.0, 100.0);
    let res = sideband_sweep(&sys, &default_sideband_grid(), from_periods(60.0), 1e-3).unwrap();
    let mut last = 0.0;
    for target in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3] {
        let t = sideband_time_limit(&res, target).unwrap();
        assert!(t >= last, "target {target}: {t} < {last}");
        last = t;
    }
    assert!(sideband_time_limit(&res, 1e-6).is_err());
}

fn random_hermitian(d: usize, seed: u64) -> DMatrix<Complex64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn controls_of(sys: &SystemSpec, raw: &[(f64, f64)]) -> Vec<Complex64> {
    (0..sys.n_control_slots)
        .map(|k| {
            let (re, im) = raw[k];
            if sys.slot_is_complex(k) {
                Complex64::new(re, im)
            } else {
                Complex64::new(re.abs(), 0.0)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn diffusion_is_positive_semidefinite(
        det in 0.2f64..3.0, km in 0.0f64..1.0, nm in 0.0f64..5.0, nt in 0.0f64..200.0,
        g in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let sys = bipartite(det, km, nm, nt);
        let gen = build_generators(&sys, &[Complex64::new(g.0, g.1)]).unwrap();
        let eig = gen.diffusion.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-12 * gen.diffusion.amax().max(1.0));
        prop_assert!((&gen.diffusion - gen.diffusion.transpose()).amax() == 0.0);
    }

    #[test]
    // Control ranges keep parametric growth small enough for the symplectic
    // spectrum to be resolved in double precision.
    fn propagation_keeps_states_physical(
        tri in any::<bool>(),
        steps in prop::collection::vec(((-1.0f64..1.0, -1.0f64..1.0), (-2.0f64..2.0, -2.0f64..2.0)), 1..20),
        dt in 0.01f64..2.0,
    ) {
        let sys = if tri {
            TripartiteParams { magnon_frequency: 50.0, ..TripartiteParams::default() }.build().unwrap()
        } else {
            bipartite(1.0, 0.1, 0.0, 100.0)
        };
        let mut s = thermal_covariance(&sys);
        for (a, b) in &steps {
            let c = controls_of(&sys, &[*a, *b]);
            let gen = build_generators(&sys, &c).unwrap();
            s = propagate(&s, &gen, dt).unwrap();
            prop_assert!((&s.sigma - s.sigma.transpose()).amax() <= 1e-12 * s.sigma.amax());
            prop_assert!(s.min_symplectic_eigenvalue() >= 0.5 - 1e-9, "ν = {}", s.min_symplectic_eigenvalue());
        }
    }

    #[test]
    fn propagation_is_affine_in_the_initial_state(
        w in 0.0f64..1.0, n1 in 0.0f64..10.0, n2 in 0.0f64..10.0, g in (-1.0f64..1.0, -1.0f64..1.0), dt in 0.1f64..5.0,
    ) {
        let sys = bipartite(1.0, 0.1, 0.0, 1.0);
        let gen = build_generators(&sys, &[Complex64::new(g.0, g.1)]).unwrap();
        let start = |n: f64| CovarianceState { sigma: DMatrix::identity(4, 4) * (n + 0.5), time: 0.0 };
        let (a, b) = (start(n1), start(n2));
        let mix = CovarianceState { sigma: &a.sigma * w + &b.sigma * (1.0 - w), time: 0.0 };
        let pa = propagate(&a, &gen, dt).unwrap();
        let pb = propagate(&b, &gen, dt).unwrap();
        let pm = propagate(&mix, &gen, dt).unwrap();
        let combo = &pa.sigma * w + &pb.sigma * (1.0 - w);
        prop_assert!((&pm.sigma - &combo).amax() <= 1e-10 * combo.amax().max(1.0));
    }

    #[test]
    fn time_limit_equals_quarter_period_of_effective_coupling(
        wm in 10.0f64..1e6, os in 0.1f64..200.0, op in 0.1f64..200.0,
    ) {
        let t = raman_time_limit(wm, os, op).unwrap();
        let (_, eff) = effective_two_mode(wm, os, op);
        let via = std::f64::consts::FRAC_PI_2 / eff;
        prop_assert!((t - via).abs() <= 4.0 * f64::EPSILON * t);
    }

    #[test]
    fn master_equation_rhs_is_traceless_and_hermitian(seed in any::<u64>(), g in (-0.5f64..0.5, -0.5f64..0.5)) {
        let sys = bipartite(0.9, 0.2, 0.3, 0.7);
        let fock = FockConfig::new(vec![3, 4]).unwrap();
        let h = build_hamiltonian(&sys, &[Complex64::new(g.0, g.1)], &fock).unwrap();
        let rho = DensityMatrix { rho: random_hermitian(12, seed), time: 0.0 };
        let d = lindblad_rhs(&rho, &h, &sys, &fock).unwrap();
        prop_assert!(d.trace().norm() < 1e-12);
        prop_assert!((&d - d.adjoint()).camax() < 1e-12);
    }
}

#[test]
fn oracle_keeps_trace_and_positivity_under_pulses() {
    let sys = bipartite(1.0, 0.2, 0.0, 0.2);
    let fock = FockConfig::new(vec![6, 6]).unwrap();
    let rho0 = magcool_core::oracle::thermal_density(&sys, &fock).unwrap();
    let values = (0..20).map(|k| vec![Complex64::from_polar(0.2, k as f64)]).collect();
    let sched = ControlSchedule::new(DEFAULT_DT, values).unwrap();
    let traj = evolve_qme(&sys, &fock, &rho0, &sched, sched.horizon(), Tolerances::default()).unwrap();
    for s in &traj.states {
        s.validate(1e-8).unwrap();
    }
    assert!(traj.diagnostics.max_trace_drift < 1e-8);
}
