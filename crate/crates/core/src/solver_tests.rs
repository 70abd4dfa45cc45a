use num_complex::Complex64;

use super::*;
use crate::nonlinear::overlap_direct;
use crate::spectral::{
    eigensystem_for, sample_potential, select_modes, Box1D, DistributionSpec, EigenSystem,
};

fn instance(seed: u64) -> (EigenSystem, crate::spectral::ModeSelection) {
    let v = sample_potential(&DistributionSpec::Uniform01, Box1D::symmetric(48), seed).unwrap();
    let eig = eigensystem_for(&v).unwrap();
    let sel = select_modes(&eig, &[45], 4, &[1.5]).unwrap();
    (eig, sel)
}

#[test]
fn initial_guess_shape_and_residual_order_delta() {
    let (eig, sel) = instance(2);
    let sched = SolveSchedule::for_b(1);
    let delta = 1e-3;
    let state = initial_guess(&eig, &sel, delta, 1, &sched).unwrap();
    assert_eq!(state.u.len(), 1);
    assert_eq!(state.u.get(&[-1], sel.alphas[0]), Complex64::new(1.5, 0.0));
    assert_eq!(state.omega, sel.omega0);
    // The linear solution solves the system to order delta.
    assert!(state.residual_norm <= 50.0 * delta, "residual {}", state.residual_norm);
    assert!(state.residual_norm > 0.0);

    // delta = 0: exact solution of the linear system.
    let zero = initial_guess(&eig, &sel, 0.0, 1, &sched).unwrap();
    assert_eq!(zero.residual_norm, 0.0);
}

#[test]
fn q_update_hand_formula_single_mode() {
    let (eig, sel) = instance(3);
    let delta = 1e-3;
    let sched = SolveSchedule::for_b(1);
    let state = initial_guess(&eig, &sel, delta, 1, &sched).unwrap();
    let (omega, max_im) = q_update(&state.u, &eig, &sel, delta, 1).unwrap();
    // With a single mode the only gauge-row term is a^3 A, so
    // omega = mu + delta a^2 A exactly.
    let a1 = overlap_direct(&eig, &[sel.alphas[0]; 4]);
    let mu = eig.eigenvalue(sel.alphas[0]);
    let expect = mu + delta * 1.5 * 1.5 * a1;
    assert!((omega[0] - expect).abs() < 1e-15, "{} vs {expect}", omega[0]);
    assert!(max_im <= 1e-10);

    let (omega0, _) = q_update(&state.u, &eig, &sel, 0.0, 1).unwrap();
    assert_eq!(omega0, sel.omega0);
}

#[test]
fn newton_zero_delta_is_a_fixed_point() {
    let (eig, sel) = instance(5);
    let sched = SolveSchedule::for_b(1);
    let state = initial_guess(&eig, &sel, 0.0, 1, &sched).unwrap();
    let next = newton_step(&state, &eig, &sel, 0.0, 1, &sched).unwrap();
    assert_eq!(next.history.last().unwrap().correction_norm, 0.0);
    assert_eq!(next.residual_norm, 0.0);
    assert_eq!(next.u.len(), 1);
}

#[test]
fn solve_converges_and_certifies() {
    let (eig, sel) = instance(7);
    let delta = 1e-3;
    let sched = SolveSchedule::for_b(1);
    let (cert, state) = solve(&eig, &sel, delta, 1, &sched, Some(true)).unwrap();
    assert!(cert.converged, "failure: {:?}", cert.failure);
    assert!(cert.final_residual <= sched.tol);
    assert!(cert.iterations <= 8, "iterations {}", cert.iterations);

    // Gauge invariance, bitwise.
    assert_eq!(state.u.get(&[-1], sel.alphas[0]), Complex64::new(1.5, 0.0));

    // Monotone residual decay after the first correction, until the floor.
    let residuals: Vec<f64> = cert.history.iter().map(|h| h.residual).collect();
    for w in residuals.windows(2).skip(1) {
        assert!(w[1] < w[0] || w[0] <= sched.tol, "residuals not decreasing: {residuals:?}");
    }
    // Contraction by at least 10x per step until the floor.
    for w in residuals.windows(2) {
        if w[1] > sched.tol {
            assert!(w[1] <= 0.1 * w[0], "slow contraction: {residuals:?}");
        }
    }

    // Support containment on the frequency axis.
    assert!(state.u.max_n_radius() <= sched.n_radius);

    // Stored residual matches an independent recomputation.
    let (_, again) =
        residual_slabs(&state.u, &state.omega, &eig, delta, 1, sched.n_radius).unwrap();
    assert!((again - state.residual_norm).abs() <= 1e-12);

    // Halo honesty: the residual on the larger box stays within 10x tol.
    assert!(cert.halo_residual <= 10.0 * sched.tol, "halo {}", cert.halo_residual);

    // Certificate quantities.
    assert!(cert.distance_to_guess <= delta.sqrt());
    assert!(cert.omega_deviation[0].abs() <= 10.0 * delta);
    assert!(cert.coeff_decay.unwrap().gamma_hat > 0.0);
    assert!(cert.omega_window_excess <= 1.0);

    // The minus-sector residual is the conjugate flip of the plus sector.
    let (f, _) = residual_slabs(&state.u, &state.omega, &eig, delta, 1, sched.n_radius).unwrap();
    for (n, slab) in &f.minus.slabs {
        let flipped: Vec<i64> = n.iter().map(|&k| -k).collect();
        for (idx, &c) in slab.iter().enumerate() {
            let mirror = f.plus.get(&flipped, idx);
            assert!((c - mirror.conj()).norm() <= 1e-12);
        }
    }
}

#[test]
fn schedule_defaults_hold_at_small_delta_and_break_at_half() {
    let params = ScheduleParams::default();
    let ok = schedule_check(1e-3, 10.0, &params).unwrap();
    assert!(ok.holds, "first violation {:?}", ok.first_violation);
    assert_eq!(ok.margins.len(), 30);

    let bad = schedule_check(0.5, 10.0, &params).unwrap();
    assert!(!bad.holds);
    let (r, _) = bad.first_violation.unwrap();
    assert!(r <= 3, "threshold failure should appear at small r, got {r}");
}

#[test]
fn schedule_margins_match_direct_evaluation() {
    // Oracle: plain f64 evaluation of the four relations (valid while the
    // sequences stay inside the representable range, r <= 8).
    let params = ScheduleParams::default();
    let delta: f64 = 1e-3;
    let m: f64 = 10.0;
    let report = schedule_check(delta, m, &params).unwrap();
    let x = |r: i32| (4f64 / 3.0).powi(r);
    let d = |r: i32| delta.powf(0.5) * m.powf(-x(r));
    let db = |r: i32| delta.powf(0.125) * m.powf(-0.5 * x(r));
    let k = |r: i32| delta.powf(0.75) * m.powf(-x(r + 2));
    let kb = |r: i32| delta.powf(0.375) * m.powf(-0.5 * x(r + 2));
    for r in 1..=8i32 {
        let g = m.powf(((r + 1) as f64).powf(params.growth_exponent));
        let e = (-(params.smoothing_c / 3.0) * m.powi(r + 1)).exp();
        let nu = params.nu;
        let rhs = [
            delta.powf(-nu) * g * k(r),
            delta.powf(-2.0 * nu) * g * g * kb(r) + delta.powf(-nu) * g * d(r + 1),
            delta.powf(1.0 - nu) * e * k(r) + d(r + 1) * d(r + 1),
            delta.powf(-2.0 * nu) * g * g * k(r)
                + delta.powf(1.0 - nu) * e * kb(r)
                + d(r + 1) * db(r + 1),
        ];
        let lhs = [d(r + 1), db(r + 1), k(r + 1), kb(r + 1)];
        let (_, margins) = report.margins[(r - 1) as usize];
        for i in 0..4 {
            let direct = (lhs[i] / rhs[i]).log10();
            assert!(
                (margins[i] - direct).abs() < 1e-9,
                "r={r} relation {}: log margin {} vs direct {direct}",
                i + 1,
                margins[i]
            );
        }
    }
}

#[test]
fn schedule_rejects_bad_inputs() {
    let params = ScheduleParams::default();
    assert!(schedule_check(0.0, 10.0, &params).is_err());
    assert!(schedule_check(1e-3, 1.0, &params).is_err());
    let bad_nu = ScheduleParams { nu: 1.5, ..Default::default() };
    assert!(schedule_check(1e-3, 10.0, &bad_nu).is_err());
}
