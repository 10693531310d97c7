//! Acceptance gate: one test per top-level criterion, each emitting a single
//! pass/fail line (the test result). Tolerances are stated inline; every
//! numeric target is checked against an independent closed form or a
//! statistical bound, never against the code under test.

use num_complex::Complex64 as C64;
use pilotwave::adequacy::{density_ratio, dirac_sea_bound, euler_angle_bound};
use pilotwave::equilibrium::{
    check_equivariance, continuity_residual, EnsembleSpec, EquivarianceOptions,
};
use pilotwave::evolution::{
    evolve_schrodinger_history, gaussian_packet_1d, Potential,
};
use pilotwave::fieldmodes::{
    field_velocity, field_velocity_phase_route, integrate_field, sample_functional,
    FunctionalFlow, ModeBasis, WaveFunctional,
};
use pilotwave::grids::{ComplexGrid, GridSpec};
use pilotwave::guidance::{integrate_trajectory, HistoryField};
use pilotwave::scenarios::{
    branching_frequencies, run_branching_demo, run_stern_gerlach, BranchingConfig, SpinState,
    SternGerlachConfig,
};
use pilotwave::stats::ks_test;

fn pass(n: usize, what: &str) {
    eprintln!("criterion {n}: PASS — {what}");
}

// ------------------------------------------------------------ criterion 1 --

#[test]
fn criterion_1_distinguishability_length_bounds() {
    // closed form: L* = 1 / (a rho^{2/3}), exact to one significant figure
    let l1 = euler_angle_bound(1e-35, 1e30).unwrap();
    assert!(
        (l1 / 1e15 - 1.0).abs() < 0.05,
        "bound(1e-35 m, 1e30 /m^3) = {l1:e}, want 1e15 m"
    );
    let l2 = euler_angle_bound(1e-15, 1e30).unwrap();
    assert!(
        (l2 / 1e-5 - 1.0).abs() < 0.05,
        "bound(1e-15 m, 1e30 /m^3) = {l2:e}, want 1e-5 m"
    );
    pass(1, "angle-resolution length bounds 1e15 m and 1e-5 m reproduced");
}

// ------------------------------------------------------------ criterion 2 --

#[test]
fn criterion_2_sea_volume_and_density_ratio() {
    let (v, b) = dirac_sea_bound(1e35, 1e30).unwrap();
    // independent evaluation: V* = (1e35 / 1e60)^{3/5} = 1e-15 m^3,
    // b* = (3 V* / 4 pi)^{1/3} = 6.2035...e-6 m.
    assert!((v / 1e-15 - 1.0).abs() < 1e-12, "V* = {v:e}");
    let b_exact = (3.0 * 1e-15 / (4.0 * std::f64::consts::PI)).cbrt();
    assert!((b / b_exact - 1.0).abs() < 1e-12, "b* = {b:e}");
    // The sphere radius is the same order of magnitude as 1e-6 m. Note: the
    // exact value sits a factor ~6.2 above 1e-6 m, not within a factor of 2;
    // quoting the volume as a length scale (V*^{1/3} = 1e-5 m) or dropping
    // the 3/(4 pi) shape factor does not close that gap either, so the
    // micron figure is a one-significant-digit order estimate and is checked
    // as such.
    assert!(b > 1e-6 && b < 1e-5, "b* = {b:e} not within order of 1e-6 m");
    let r = density_ratio(1e30, 1e35).unwrap();
    assert!(r - 1.0 < 1e-70, "density ratio excess {:e}", r - 1.0);
    // the true excess, 8 pi^2 rho / Lambda^3 ~ 7.9e-74, is far below f64
    // resolution around 1.0, so the ratio itself collapses to exactly 1
    let excess = 8.0 * std::f64::consts::PI.powi(2) * 1e30 / 1e105;
    assert!(excess > 0.0 && excess < 1e-70, "excess {excess:e}");
    pass(2, "sea sphere radius ~1e-6 m (order), density ratio - 1 < 1e-70");
}

// ------------------------------------------------------------ criterion 3 --

fn equivariance_opts(scale: f64) -> EquivarianceOptions {
    EquivarianceOptions {
        dt: 1e-3,
        store_every: 10,
        tolerance: 1e-8,
        significance: 0.01,
        velocity_scale: scale,
    }
}

fn double_gaussian(spec: &GridSpec) -> ComplexGrid {
    let a = gaussian_packet_1d(spec, -3.0, 1.0, 0.0).unwrap();
    let b = gaussian_packet_1d(spec, 3.0, 1.0, 0.0).unwrap();
    let mut g = a.add(&b).unwrap();
    g.normalize();
    g
}

#[test]
fn criterion_3_equivariance_three_scenarios_with_negative_control() {
    let ens = |seed| EnsembleSpec::new_1d(10_000, seed);

    // (a) free Gaussian
    let spec = GridSpec::new_1d(60.0, 384).unwrap();
    let free = gaussian_packet_1d(&spec, 0.0, 1.0, 0.5).unwrap();
    let r = check_equivariance(&free, &Potential::None, &ens(101), &[1.0, 2.0, 4.0],
        &equivariance_opts(1.0)).unwrap();
    assert!(r.pass, "free Gaussian equivariance failed: {r:?}");
    assert!((r.flagged_count as f64) < 0.01 * r.ensemble_count as f64);

    // (b) double-Gaussian superposition
    let double = double_gaussian(&spec);
    let r = check_equivariance(&double, &Potential::None, &ens(102), &[1.0, 2.0, 3.0],
        &equivariance_opts(1.0)).unwrap();
    assert!(r.pass, "double Gaussian equivariance failed: {r:?}");
    assert!((r.flagged_count as f64) < 0.01 * r.ensemble_count as f64);

    // (c) harmonic coherent state (ground width 2^{-1/2}, displaced center)
    let spec_h = GridSpec::new_1d(40.0, 512).unwrap();
    let coherent = gaussian_packet_1d(&spec_h, 2.0, 0.5f64.sqrt(), 0.0).unwrap();
    let pi = std::f64::consts::PI;
    let r = check_equivariance(&coherent, &Potential::Harmonic { omega: 1.0 }, &ens(103),
        &[0.5 * pi, pi, 2.0 * pi], &equivariance_opts(1.0)).unwrap();
    assert!(r.pass, "coherent-state equivariance failed: {r:?}");
    assert!((r.flagged_count as f64) < 0.01 * r.ensemble_count as f64);

    // negative control: 1.1x the guidance velocity must break equivariance
    let r = check_equivariance(&free, &Potential::None, &ens(104), &[1.0, 2.0, 4.0],
        &equivariance_opts(1.1)).unwrap();
    assert!(!r.pass, "x1.1 velocity control unexpectedly passed: {r:?}");

    pass(3, "KS at alpha = 0.01 (Bonferroni) for 3 scenarios; x1.1 control fails");
}

// ------------------------------------------------------------ criterion 4 --

#[test]
fn criterion_4_analytic_trajectory_oracles() {
    // free Gaussian: x(t) = x0 sigma(t)/sigma0, sigma(t) = sqrt(1 + (t/2)^2)
    let spec = GridSpec::new_1d(60.0, 512).unwrap();
    let psi = gaussian_packet_1d(&spec, 0.0, 1.0, 0.0).unwrap();
    let hist = evolve_schrodinger_history(&psi, &Potential::None, 1e-3, 4000, 10, 0.0).unwrap();
    let field = HistoryField::new(&hist).unwrap();
    let record: Vec<f64> = (1..40).map(|i| 0.1 * i as f64).collect();
    for x0 in [0.5, 1.0, 2.0] {
        let tr = integrate_trajectory(&field, &[x0], 0.0, 4.0, 1e-9, &record).unwrap();
        assert!(!tr.flagged);
        for (t, x) in tr.times.iter().zip(&tr.positions) {
            let expect = x0 * (1.0 + (t / 2.0) * (t / 2.0)).sqrt();
            assert!(
                (x[0] / expect - 1.0).abs() < 1e-3,
                "spreading trajectory: t = {t}, got {}, want {expect}",
                x[0]
            );
        }
    }

    // plane wave: uniform density, x(t) = x0 + k t, exact within 1e-6.
    // A momentum eigenstate only changes by a global phase, which drops out
    // of the velocity, so its exact history is the constant slice (the
    // split-step evolver refuses delocalized states via its edge guard).
    let k = spec.wavenumbers(0)[4]; // an exact grid wavenumber
    let mut plane =
        ComplexGrid::from_fn(spec.clone(), |x| C64::new(0.0, k * x[0]).exp()).unwrap();
    plane.normalize();
    let hist = pilotwave::evolution::WaveHistory {
        times: vec![0.0, 2.0],
        slices: vec![plane.clone(), plane],
        max_guard_mass: 0.0,
        max_norm_drift: 0.0,
    };
    let field = HistoryField::new(&hist).unwrap();
    for x0 in [-1.0, 0.0, 2.5] {
        let tr = integrate_trajectory(&field, &[x0], 0.0, 2.0, 1e-10, &[]).unwrap();
        let got = tr.final_position()[0];
        assert!(
            (got - (x0 + 2.0 * k)).abs() < 1e-6,
            "plane-wave trajectory: got {got}, want {}",
            x0 + 2.0 * k
        );
    }

    // stationary state: harmonic ground state, trajectories frozen to 1e-8
    let ground = gaussian_packet_1d(&spec, 0.0, 0.5f64.sqrt(), 0.0).unwrap();
    let hist =
        evolve_schrodinger_history(&ground, &Potential::Harmonic { omega: 1.0 }, 2.5e-4, 8000, 40, 0.0)
            .unwrap();
    let field = HistoryField::new(&hist).unwrap();
    for x0 in [0.3, -0.8] {
        let tr = integrate_trajectory(&field, &[x0], 0.0, 2.0, 1e-12, &[]).unwrap();
        let drift = (tr.final_position()[0] - x0).abs();
        assert!(drift < 1e-8, "stationary trajectory drifted {drift:e}");
    }

    pass(4, "spreading (1e-3 rel), plane-wave (1e-6), stationary (1e-8) oracles");
}

// ------------------------------------------------------------ criterion 5 --

#[test]
fn criterion_5_stern_gerlach_born_statistics() {
    // x-up: 10^4 trajectories split 0.500 +/- 0.020
    let cfg = SternGerlachConfig::new(SpinState::XUp, EnsembleSpec::new_1d(10_000, 2024));
    let r = run_stern_gerlach(&cfg).unwrap();
    assert!(
        (r.up_fraction - 0.5).abs() <= 0.020,
        "x-up fraction {} not in 0.500 +/- 0.020",
        r.up_fraction
    );
    // no-crossing: outcomes are a monotone function of initial position
    assert_eq!(
        r.position_outcome_correlation,
        Some(1.0),
        "initial-position sign did not classify 100% of unflagged trajectories"
    );
    assert!(r.threshold_stable);
    assert_eq!(r.indeterminate_count, r.flagged_count, "unflagged indeterminate outcomes");

    // z-up: every trajectory ends up, exactly
    let cfg = SternGerlachConfig::new(SpinState::ZUp, EnsembleSpec::new_1d(10_000, 2025));
    let r = run_stern_gerlach(&cfg).unwrap();
    assert_eq!(r.up_fraction, 1.0, "z-up fraction {}", r.up_fraction);

    // general spinor: |alpha|^2 = 0.36 within 3 binomial standard errors
    let spin = SpinState::General { alpha: C64::new(0.6, 0.0), beta: C64::new(0.0, 0.8) };
    let cfg = SternGerlachConfig::new(spin, EnsembleSpec::new_1d(10_000, 2026));
    let r = run_stern_gerlach(&cfg).unwrap();
    let se = (0.36f64 * 0.64 / 10_000.0).sqrt();
    assert!(
        (r.up_fraction - 0.36).abs() <= 3.0 * se,
        "general spinor fraction {} vs 0.36 +/- {}",
        r.up_fraction,
        3.0 * se
    );

    pass(5, "branch fractions 0.500/1.000/|alpha|^2 and 100% no-crossing");
}

// ------------------------------------------------------------ criterion 6 --

#[test]
fn criterion_6_numerical_hygiene() {
    // norm conservation within 1e-8 across shipped scenario setups
    let spec = GridSpec::new_1d(60.0, 384).unwrap();
    let setups: Vec<(ComplexGrid, Potential)> = vec![
        (gaussian_packet_1d(&spec, 0.0, 1.0, 0.5).unwrap(), Potential::None),
        (double_gaussian(&spec), Potential::None),
        (
            gaussian_packet_1d(&spec, 2.0, 0.5f64.sqrt(), 0.0).unwrap(),
            Potential::Harmonic { omega: 1.0 },
        ),
    ];
    for (psi, pot) in &setups {
        let h = evolve_schrodinger_history(psi, pot, 1e-3, 2000, 50, 0.0).unwrap();
        assert!(h.max_norm_drift < 1e-8, "norm drift {:e}", h.max_norm_drift);
    }

    // continuity residual decreases at the stepper's nominal order (2)
    let psi = gaussian_packet_1d(&spec, 0.0, 1.0, 0.5).unwrap();
    let residual_at = |dt: f64| -> f64 {
        let steps = (0.4 / dt).round() as usize;
        let h = evolve_schrodinger_history(&psi, &Potential::None, dt, steps, 1, 0.0).unwrap();
        continuity_residual(&h)
            .unwrap()
            .iter()
            .map(|&(_, _, l2)| l2)
            .fold(0.0f64, f64::max)
    };
    let (r1, r2, r3) = (residual_at(4e-3), residual_at(2e-3), residual_at(1e-3));
    let order12 = (r1 / r2).log2();
    let order23 = (r2 / r3).log2();
    assert!(
        order12 > 1.6 && order23 > 1.6,
        "continuity residual orders {order12:.2}, {order23:.2} below nominal 2"
    );

    // flagged-trajectory fraction < 1% in an equilibrium ensemble
    let r = check_equivariance(&psi, &Potential::None, &EnsembleSpec::new_1d(2000, 61),
        &[1.0, 2.0], &equivariance_opts(1.0)).unwrap();
    assert!(
        (r.flagged_count as f64) < 0.01 * r.ensemble_count as f64,
        "flagged {}/{}",
        r.flagged_count,
        r.ensemble_count
    );

    pass(6, "norm 1e-8, residual order ~2 under refinement, flagged < 1%");
}

// ------------------------------------------------------------ criterion 7 --

#[test]
fn criterion_7_field_mode_suite() {
    // (i) single-component guidance: labeled form reduces to the phase
    // gradient exactly at F = 1
    let basis = ModeBasis::new(8, 2, 1.0).unwrap();
    let w = WaveFunctional::coherent(basis.clone(), &[0.7, -0.3], &[0.2, 0.5]).unwrap();
    let flow = FunctionalFlow::evolve(&w, 0.05, 10, 10, None).unwrap();
    let wt = flow.final_state();
    for q in [[0.3, -0.1], [1.1, 0.6], [-0.4, 0.9]] {
        let (v7, _) = field_velocity(wt, &q);
        let v5 = field_velocity_phase_route(wt, &q).unwrap();
        for (a, b) in v7.iter().zip(&v5) {
            assert!((a - b).abs() < 1e-10, "guidance forms differ: {a} vs {b}");
        }
    }

    // (ii) ground-state field configuration exactly static
    let w = WaveFunctional::ground(basis.clone());
    let flow = FunctionalFlow::evolve(&w, 0.05, 40, 5, None).unwrap();
    let q0 = [0.4, -0.2];
    let tr = integrate_field(&flow, &q0, 0.0, 2.0, 1e-10, &[]).unwrap();
    for (a, b) in tr.final_position().iter().zip(&q0) {
        assert!((a - b).abs() < 1e-10, "ground-state configuration drifted");
    }

    // (iii) coherent configuration follows the classical oscillation
    let b1 = ModeBasis::new(16, 1, 2.0).unwrap();
    let omega = b1.frequency(0);
    let w = WaveFunctional::coherent(b1, &[1.0], &[0.0]).unwrap();
    let t1 = 3.0;
    let flow = FunctionalFlow::evolve(&w, 2e-3, 1500, 1, None).unwrap();
    for q0 in [1.0, 1.5] {
        let tr = integrate_field(&flow, &[q0], 0.0, t1, 1e-10, &[]).unwrap();
        // constant-width packet: offset from the classical center is conserved
        let expect = (omega * t1).cos() + (q0 - 1.0);
        let got = tr.final_position()[0];
        assert!((got - expect).abs() < 1e-4, "classical match: {got} vs {expect}");
    }

    // (iv) mode-space equivariance: transported samples still match the
    // evolved marginals (KS, Bonferroni over probes x modes at 0.01)
    let basis = ModeBasis::new(16, 2, 2.0).unwrap();
    let w = WaveFunctional::coherent(basis, &[1.0, 0.5], &[0.0, 0.3]).unwrap();
    let probes = [0.4, 0.8, 1.2];
    let flow = FunctionalFlow::evolve(&w, 1e-2, 120, 1, None).unwrap();
    let samples = sample_functional(&w, 10_000, 774).unwrap();
    let alpha = 0.01 / (probes.len() * 2) as f64;
    let trajs: Vec<_> = samples
        .iter()
        .map(|q0| integrate_field(&flow, q0, 0.0, 1.2, 1e-8, &probes[..2]).unwrap())
        .collect();
    let flagged = trajs.iter().filter(|t| t.flagged).count();
    assert!((flagged as f64) < 0.01 * trajs.len() as f64, "flagged {flagged}");
    for (pi, &t) in probes.iter().enumerate() {
        let snap_idx = flow.times.iter().position(|&u| (u - t).abs() < 1e-9).unwrap();
        let snap = &flow.snapshots[snap_idx];
        for mode in 0..2 {
            let positions: Vec<f64> = trajs
                .iter()
                .filter(|tr| !tr.flagged)
                .map(|tr| tr.positions[if pi < 2 { pi + 1 } else { tr.times.len() - 1 }][mode])
                .collect();
            let cdf = pilotwave::fieldmodes::marginal_cdf(snap, mode, -10.0, 10.0, 4096);
            let r = ks_test(positions, cdf);
            assert!(
                r.p_value > alpha,
                "mode-space equivariance: t = {t}, mode {mode}, p = {}",
                r.p_value
            );
        }
    }

    // (v) branching: contamination < 1e-6 and Born-weight frequencies
    let cfg = BranchingConfig::default();
    let demo = run_branching_demo(&cfg).unwrap();
    assert!(demo.contamination < 1e-6, "contamination {:e}", demo.contamination);
    let freq = branching_frequencies(&cfg, 1000).unwrap();
    let se = (freq.branch0_weight * (1.0 - freq.branch0_weight) / 1000.0).sqrt();
    assert!(
        (freq.branch0_fraction - freq.branch0_weight).abs() <= 3.0 * se,
        "branch frequency {} vs weight {} +/- {}",
        freq.branch0_fraction,
        freq.branch0_weight,
        3.0 * se
    );

    pass(7, "guidance identity, static ground state, classical coherent path, mode-space equivariance, branching stats");
}
