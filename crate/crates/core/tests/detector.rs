use nalgebra::{DMatrix, DVector};
use smpd_core::detector::*;
use smpd_core::hilbert::*;
use smpd_core::lindblad::*;
use smpd_core::metrics::decay_rate_one_decade;

const I: C64 = C64::new(0.0, 1.0);

fn lossless_qubit(mut p: CircuitParams) -> CircuitParams {
    p.kappa_q = 0.0;
    p.kappa_phi = 0.0;
    p.gamma_up = 0.0;
    p
}

/// Final qubit population after one buffer photon, from the two amplitudes
/// `|g,1,0>` and `|e,0,1>`: `P = kappa_w * X_BB` with `M X + X M' = -c0 c0'`.
fn single_excitation_oracle(p: &CircuitParams) -> f64 {
    let r = DerivedRates::compute(p).unwrap();
    let e_b = p.delta - p.chi_qw;
    let h = DMatrix::from_row_slice(2, 2, &[
        C64::new(0.0, -p.kappa_b / 2.0),
        r.g3.conj(),
        r.g3,
        C64::new(e_b, -p.kappa_w / 2.0),
    ]);
    let m = h * (-I);
    let id = DMatrix::<C64>::identity(2, 2);
    // vec(M X + X M') = (I kron M + conj(M) kron I) vec(X)
    let a = id.kronecker(&m) + m.conjugate().kronecker(&id);
    let rhs = DVector::from_column_slice(&[C64::new(-1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let x = a.lu().solve(&rhs).unwrap();
    p.kappa_w * x[3].re
}

#[test]
fn one_photon_full_model_matches_two_level_oracle() {
    let p = lossless_qubit(CircuitParams::bundled());
    let oracle = single_excitation_oracle(&p);
    assert!((oracle - 0.19066).abs() < 5e-5, "oracle {oracle}");
    for (nb, nw) in [(2, 2), (3, 3)] {
        let mut q = p.clone();
        q.n_buffer = nb;
        q.n_waste = nw;
        let g = build_full_model(&q, None, None).unwrap();
        let rho = DensityMatrix::fock(g.layout(), &[(BUFFER, 1)]).unwrap();
        let t = run_with_observables(&g, &rho, &[0.0, 5e-6, 10e-6], &StepControl::default()).unwrap();
        let pe = t.observable("p_e").unwrap();
        assert!((pe[2] - oracle).abs() < 1e-4, "dims ({nb},{nw}): {} vs {oracle}", pe[2]);
        assert!((pe[2] - pe[1]).abs() < 1e-9);
    }
}

#[test]
fn excitation_bookkeeping_against_rhs() {
    let mut p = CircuitParams::bundled();
    p.n_buffer = 3;
    p.n_waste = 3;
    let drive = buffer_pulse(&p, 0.4, 0.0, 2e-6).unwrap();
    let eps = drive.peak();
    let g = build_full_model(&p, Some(&drive), None).unwrap();
    let l = g.layout().clone();
    let t = evolve(&g, &DensityMatrix::vacuum(&l), &[0.0, 3e-7], &StepControl::default()).unwrap();
    let rho = t.final_state();
    let d = rhs(&g, 3e-7, rho).unwrap();
    let ev = |op: &Operator| expectation(rho, op).unwrap().re;
    let rate = |op: &Operator| (op.matrix() * &d).trace().re;
    let nb = number(&l, BUFFER).unwrap();
    let nw = number(&l, WASTE).unwrap();
    let ne = level_projector(&l, QUBIT, 1).unwrap();
    let ng = level_projector(&l, QUBIT, 0).unwrap();
    let input = -2.0 * eps * ev(&annihilation(&l, BUFFER).unwrap());

    let bw = rate(&(&nb + &nw));
    let expected_bw = input - p.kappa_b * ev(&nb) - p.kappa_w * ev(&nw);
    assert!((bw - expected_bw).abs() < 1e-9 * expected_bw.abs().max(1.0), "{bw} vs {expected_bw}");

    let bq = rate(&(&nb + &ne));
    let expected_bq = input - p.kappa_b * ev(&nb) - p.kappa_q * ev(&ne) + p.gamma_up * ev(&ng);
    assert!((bq - expected_bq).abs() < 1e-9 * expected_bq.abs().max(1.0), "{bq} vs {expected_bq}");
    assert!(input > 0.0);
}

#[test]
fn conditional_buffer_amplitude_tracks_beta() {
    let mut p = CircuitParams::bundled();
    p.n_buffer = 6;
    let r = DerivedRates::compute(&p).unwrap();
    let drive = buffer_pulse(&p, 1.0, 0.0, 4e-6).unwrap();
    let eps = drive.peak();
    let beta = -2.0 * eps / (r.kappa_nl + p.kappa_b);
    let g = build_reduced_model(&p, &ReducedOptions::default(), Some(&drive)).unwrap();
    let l = g.layout().clone();
    let t = evolve(&g, &DensityMatrix::vacuum(&l), &[0.0, 3e-6, 3.9e-6], &StepControl::default()).unwrap();
    let pg = level_projector(&l, QUBIT, 0).unwrap();
    let b = annihilation(&l, BUFFER).unwrap();
    for s in &t.states[1..] {
        let amp = expectation(s, &(&b * &pg)).unwrap() / expectation(s, &pg).unwrap();
        assert!((amp - C64::new(beta, 0.0)).norm() < 1e-3 * beta.abs(), "{amp} vs {beta}");
    }
}

#[test]
fn coherent_steady_start_follows_click_law() {
    let mut p = CircuitParams::bundled();
    p.n_buffer = 6;
    let r = DerivedRates::compute(&p).unwrap();
    let t_end = 2e-6;
    for n in [0.2, 1.0] {
        let drive = buffer_pulse(&p, n, 0.0, t_end).unwrap();
        let beta = -2.0 * drive.peak() / (r.kappa_nl + p.kappa_b);
        let g = build_reduced_model(&p, &ReducedOptions::default(), Some(&drive)).unwrap();
        let rho0 = coherent_state(g.layout(), BUFFER, C64::new(beta, 0.0)).unwrap();
        let t = run_with_observables(&g, &rho0, &[0.0, t_end], &StepControl::default()).unwrap();
        let pe = t.observable("p_e").unwrap()[1];
        assert!((pe - (1.0 - (-r.eta * n).exp())).abs() < 1e-4);
    }
}

#[test]
fn weak_reset_rate_matches_closed_form() {
    let mut p = CircuitParams::bundled();
    p.n_buffer = 2;
    let r = DerivedRates::compute(&p).unwrap();
    let e = 0.1 * r.epsilon_w.unwrap();
    let k = reset_rate(e, r.kappa_nl, p.kappa_b, p.kappa_w);
    let g = build_reset_model(&p, e, &ReducedOptions::default()).unwrap();
    let times: Vec<f64> = (0..=30).map(|i| i as f64 * 3.0 / k / 30.0).collect();
    let t = run_with_observables(&g, &DensityMatrix::fock(g.layout(), &[(QUBIT, 1)]).unwrap(), &times, &StepControl::default()).unwrap();
    let series: Vec<(f64, f64)> = times.iter().copied().zip(t.observable("p_e").unwrap().iter().copied()).collect();
    let rate = decay_rate_one_decade(&series).unwrap();
    assert!((rate / k - 1.0).abs() < 0.05, "{rate} vs {k}");
}

#[test]
fn elimination_exact_without_three_wave_term() {
    let mut p = CircuitParams::bundled();
    p.n_buffer = 3;
    p.n_waste = 2;
    p.xi_p = C64::new(0.0, 0.0);
    p.kappa_nl_override = None;
    let drive = buffer_pulse(&p, 0.5, 0.0, 1e-6).unwrap();
    let times: Vec<f64> = (0..=10).map(|i| i as f64 * 1e-7).collect();
    let rep = adiabatic_equivalence_check(&p, &drive, &times).unwrap();
    assert!(rep.max_dev_pe < 1e-9);
    assert!(rep.max_dev_nb < 1e-6);
}

#[test]
fn config_round_trips_through_json() {
    let c = DeviceConfig::bundled();
    let again = DeviceConfig::from_json_value(c.to_json_value()).unwrap();
    assert_eq!(CircuitParams::from_config(&c).unwrap(), CircuitParams::from_config(&again).unwrap());
}
