//! Exit criteria. Each test writes one `ACn PASS|FAIL` line to stdout
//! (outside the harness capture) and then asserts the criterion.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smpd_core::detector::*;
use smpd_core::hilbert::*;
use smpd_core::lindblad::*;
use smpd_core::metrics::*;
use smpd_core::tomography::*;

const TAU: f64 = std::f64::consts::TAU;

fn verdict(id: &str, ok: bool, started: Instant, detail: String) {
    let line = format!("{id} {} ({:.1} s): {detail}\n", if ok { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "{line}");
}

fn lossless_qubit(mut p: CircuitParams) -> CircuitParams {
    p.kappa_q = 0.0;
    p.kappa_phi = 0.0;
    p.gamma_up = 0.0;
    p
}

#[test]
fn ac01_efficiency_formula() {
    let t = Instant::now();
    let eta = efficiency(TAU * 0.370e6, TAU * 1.0e6).unwrap();
    verdict("AC1", (eta - 0.788).abs() <= 0.001, t, format!("eta = {eta:.5}, expected 0.788 +- 0.001"));
}

#[test]
fn ac02_rate_chain() {
    let t = Instant::now();
    let mut p = CircuitParams::bundled();
    p.kappa_nl_override = None;
    p.xi_p = C64::new(0.076f64.sqrt(), 0.0);
    let d = DerivedRates::compute(&p).unwrap();
    let f = d.kappa_nl_closed_form / TAU;
    let ok = (f - 0.353e6).abs() < 0.0005e6 && (f / 0.370e6 - 1.0).abs() <= 0.05;
    verdict("AC2", ok, t, format!("kappa_nl/2pi = {:.4} MHz, {:+.2}% from 0.370 MHz", f / 1e6, 100.0 * (f / 0.370e6 - 1.0)));
}

#[test]
fn ac03_pump_intercept() {
    let t = Instant::now();
    let f = DerivedRates::compute(&CircuitParams::bundled()).unwrap().f_p0_hz;
    let rel = (f / 4.807e9 - 1.0).abs();
    verdict("AC3", rel <= 4e-4, t, format!("f_p0 = {:.6} GHz, relative deviation {rel:.2e}", f / 1e9));
}

#[test]
fn ac04_reduced_model_ansatz() {
    let t = Instant::now();
    let t_end = 2e-6;
    let mut worst: f64 = 0.0;
    for nb in [6, 8] {
        let mut p = CircuitParams::bundled();
        p.n_buffer = nb;
        let r = DerivedRates::compute(&p).unwrap();
        for n in [0.1, 0.5, 1.0, 2.0] {
            let drive = buffer_pulse(&p, n, 0.0, t_end).unwrap();
            let beta = -2.0 * drive.peak() / (r.kappa_nl + p.kappa_b);
            let g = build_reduced_model(&p, &ReducedOptions::default(), Some(&drive)).unwrap();
            // Start on the ansatz: qubit in |g>, buffer in its driven steady state.
            let rho0 = coherent_state(g.layout(), BUFFER, C64::new(beta, 0.0)).unwrap();
            let times: Vec<f64> = (0..=8).map(|k| k as f64 * t_end / 8.0).collect();
            let traj = run_with_observables(&g, &rho0, &times, &StepControl::default()).unwrap();
            for (s, pe) in times.iter().zip(traj.observable("p_e").unwrap()) {
                worst = worst.max((pe - click_probability(n * s / t_end, r.eta).unwrap()).abs());
            }
        }
    }
    verdict("AC4", worst < 1e-3, t, format!("max |P_e - (1 - exp(-eta n T))| = {worst:.2e} over n <= 2, dims 6 and 8"));
}

#[test]
fn ac05_adiabatic_elimination() {
    let t = Instant::now();
    let mut p = CircuitParams::bundled();
    p.n_buffer = 4;
    p.n_waste = 3;
    let drive = buffer_pulse(&p, 0.5, 0.0, 4e-6).unwrap();
    let times: Vec<f64> = (0..=80).map(|k| k as f64 * 5e-8).collect();
    let base = adiabatic_equivalence_check(&p, &drive, &times).unwrap();
    let mut fast = p.clone();
    fast.kappa_w *= 10.0;
    let scaled = adiabatic_equivalence_check(&fast, &drive, &times).unwrap();
    let ratio = base.max_dev_pe / scaled.max_dev_pe;
    let ok = base.max_dev_pe < 0.02 && ratio >= 10.0;
    verdict(
        "AC5",
        ok,
        t,
        format!("max dev {:.2e}, with 10x kappa_w {:.2e}, shrink factor {ratio:.1}", base.max_dev_pe, scaled.max_dev_pe),
    );
}

#[test]
fn ac06_one_photon_full_model() {
    let t = Instant::now();
    let mut p = lossless_qubit(CircuitParams::bundled());
    p.n_buffer = 3;
    p.n_waste = 3;
    let eta = DerivedRates::compute(&p).unwrap().eta;
    let g = build_full_model(&p, None, None).unwrap();
    let rho = DensityMatrix::fock(g.layout(), &[(BUFFER, 1)]).unwrap();
    let traj = run_with_observables(&g, &rho, &[0.0, 5e-6, 10e-6], &StepControl::default()).unwrap();
    let pe = traj.observable("p_e").unwrap()[2];
    let rel = (pe / eta - 1.0).abs();
    verdict("AC6", rel <= 0.03, t, format!("final P(e) = {pe:.5} vs eta = {eta:.5}, relative deviation {rel:.3}"));
}

fn reset_decay_rate(p: &CircuitParams, epsilon_w: f64) -> (f64, f64) {
    let d = DerivedRates::compute(p).unwrap();
    let k = reset_rate(epsilon_w, d.kappa_nl, p.kappa_b, p.kappa_w);
    let g = build_reset_model(p, epsilon_w, &ReducedOptions::default()).unwrap();
    let times: Vec<f64> = (0..=60).map(|i| i as f64 * 4.0 / k / 60.0).collect();
    let rho0 = DensityMatrix::fock(g.layout(), &[(QUBIT, 1)]).unwrap();
    let traj = run_with_observables(&g, &rho0, &times, &StepControl::default()).unwrap();
    let series: Vec<(f64, f64)> = times.iter().copied().zip(traj.observable("p_e").unwrap().iter().copied()).collect();
    (k, decay_rate_one_decade(&series).unwrap())
}

#[test]
fn ac07_reset_rate() {
    let t = Instant::now();
    let mut p = CircuitParams::bundled();
    p.n_buffer = 2;
    let e0 = DerivedRates::compute(&p).unwrap().epsilon_w.unwrap();
    let mut detail = Vec::new();
    let mut span_ok = true;
    for f in [0.02, 0.063, 0.2] {
        let (k, rate) = reset_decay_rate(&p, f * e0);
        span_ok &= (rate / k - 1.0).abs() <= 0.05;
        detail.push(format!("{f}*eps_w: {:.3}", rate / k));
    }
    let (_, rate) = reset_decay_rate(&p, e0);
    let tau = 1.0 / rate;
    let tau_ok = (tau / 370e-9 - 1.0).abs() <= 0.05;
    verdict(
        "AC7",
        span_ok && tau_ok,
        t,
        format!("rate/formula [{}]; tau at inverted eps_w = {:.0} ns vs 370 ns +- 5%", detail.join(", "), tau * 1e9),
    );
}

#[test]
fn ac08_pulse_length_sweep() {
    let t = Instant::now();
    let p = CircuitParams::bundled();
    let t_b = [0.5e-6, 1e-6, 1.5e-6, 2e-6, 2.5e-6, 3e-6, 4e-6];
    let curves = efficiency_vs_pulse_length(&p, &Regime::ALL, &t_b, &PulseProtocol::default()).unwrap();
    let eta = |r: usize, k: usize| curves[r].points[k].1;
    let (k_max, eta_max) = (0..t_b.len()).map(|k| (k, eta(3, k))).fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let ordered = (0..t_b.len()).all(|k| eta(0, k) >= eta(1, k) && eta(0, k) >= eta(2, k) && eta(2, k) >= eta(3, k));
    let near = (1.5e-6..=3e-6).contains(&t_b[k_max]);
    let ok = (0.50..=0.66).contains(&eta_max) && near && ordered;
    verdict(
        "AC8",
        ok,
        t,
        format!("max measured eta {eta_max:.3} at t_b = {:.1} us, regimes ordered: {ordered}", t_b[k_max] * 1e6),
    );
}

#[test]
fn ac09_dark_count_fits() {
    let t = Instant::now();
    let times: Vec<f64> = (0..21).map(|k| k as f64 * 0.5e-6).collect();
    let linear: Vec<(f64, f64)> = times.iter().map(|&s| (s, 0.003 + 1.4e3 * s)).collect();
    let lin = fit_dark_count(&linear).unwrap().linear;
    let gamma = 1.0 / 7.7e-6;
    let times: Vec<f64> = (0..41).map(|k| k as f64 * 1e-6).collect();
    let saturating: Vec<(f64, f64)> = times.iter().map(|&s| (s, 0.015 + (0.003 - 0.015) * (-gamma * s).exp())).collect();
    let fit = fit_dark_count(&saturating).unwrap();
    let rel = |x: f64, y: f64| (x / y - 1.0).abs();
    let mut worst = rel(lin.value("p0"), 0.003).max(rel(lin.value("gamma_dc"), 1.4e3));
    match &fit.exponential {
        Some(e) => {
            worst = worst.max(rel(e.value("p0"), 0.003)).max(rel(e.value("p_inf"), 0.015)).max(rel(e.value("gamma"), gamma));
        }
        None => worst = f64::INFINITY,
    }
    verdict("AC9", worst <= 0.02, t, format!("worst relative parameter error {worst:.2e}"));
}

#[test]
fn ac10_tomography_round_trip() {
    let t = Instant::now();
    let s = PipelineSettings::default();
    let l = s.layout().unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["vacuum", "fock1", "coherent0.6", "thermal0.5"] {
        let r = round_trip(name, &named_state(name, &l).unwrap(), &s).unwrap();
        let mut pass = r.mode_overlap > 0.98 && r.fidelity >= 0.90;
        if name == "fock1" {
            pass &= (r.signal.get(1, 1).re - 1.0).abs() <= 0.05;
        }
        ok &= pass;
        detail.push(format!("{name}: overlap {:.3} F {:.3} <n> {:.3}", r.mode_overlap, r.fidelity, r.signal.get(1, 1).re));
    }
    let cal = gain_calibration(&CALIBRATION_AMPLITUDES, &s).unwrap();
    ok &= cal.relative_error <= 0.02;
    detail.push(format!("gain error {:.2}%", 100.0 * cal.relative_error));
    verdict("AC10", ok, t, detail.join("; "));
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
    DMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_state(rng: &mut ChaCha8Rng, l: &ModeLayout) -> DensityMatrix {
    let a = random_matrix(rng, l.dim());
    let m = &a * a.adjoint();
    let tr = m.trace();
    DensityMatrix::new(l.clone(), m / tr).unwrap()
}

/// Outputs of a small end-to-end run, serialized.
fn reproducible_outputs(seed: u64) -> String {
    let s = PipelineSettings { n_traces: 5_000, seed, ..Default::default() };
    let l = s.layout().unwrap();
    let r = round_trip("fock1", &named_state("fock1", &l).unwrap(), &s).unwrap();
    let mut p = CircuitParams::bundled();
    p.n_buffer = 3;
    let drive = buffer_pulse(&p, 0.5, 0.0, 1e-6).unwrap();
    let g = build_reduced_model(&p, &ReducedOptions::all(), Some(&drive)).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * 1e-7).collect();
    let traj = run_with_observables(&g, &DensityMatrix::vacuum(g.layout()), &times, &StepControl::default()).unwrap();
    format!("{}\n{}", serde_json::to_string(&r).unwrap(), traj.to_csv())
}

#[test]
fn ac11_property_suites() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = Vec::new();

    let l = ModeLayout::new([("a", 3), ("b", 2)]).unwrap();
    let mut worst_evolve: (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut worst_dissipator: f64 = 0.0;
    for _ in 0..24 {
        let hm = random_matrix(&mut rng, 6);
        let h = Operator::new(l.clone(), (&hm + hm.adjoint()) * C64::new(1e6, 0.0)).unwrap();
        let op = Operator::new(l.clone(), random_matrix(&mut rng, 6)).unwrap();
        let rho0 = random_state(&mut rng, &l);
        let d = dissipator_apply(&op, &rho0).unwrap();
        worst_dissipator = worst_dissipator.max(d.trace().norm()).max(hermiticity_error(&d));
        let g = LindbladGenerator::new(h).unwrap().with_collapse("l", rng.random_range(1e5..5e6), op).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 2e-7).collect();
        for s in &evolve(&g, &rho0, &times, &StepControl::default()).unwrap().states {
            worst_evolve.0 = worst_evolve.0.max((s.trace().re - 1.0).abs());
            worst_evolve.1 = worst_evolve.1.max(s.hermiticity_error());
            worst_evolve.2 = worst_evolve.2.min(s.min_eigenvalue());
        }
    }
    if worst_evolve.0 > TRACE_TOL || worst_evolve.1 > HERMITIAN_TOL || worst_evolve.2 < POSITIVITY_TOL {
        failures.push(format!("evolve invariants {worst_evolve:?}"));
    }
    if worst_dissipator > 1e-12 {
        failures.push(format!("dissipator trace/hermiticity {worst_dissipator:.1e}"));
    }

    let fl = ModeLayout::single(FIELD_MODE, 6).unwrap();
    let mut worst_inversion: f64 = 0.0;
    for _ in 0..24 {
        let signal = MomentTable::of_state(&random_state(&mut rng, &fl)).unwrap().with_stage(Stage::Signal);
        let noise = MomentTable::of_state(&DensityMatrix::thermal(&fl, FIELD_MODE, rng.random_range(0.0..0.5)).unwrap())
            .unwrap()
            .with_stage(Stage::Noise);
        let gain = rng.random_range(1.0..1000.0);
        let raw = forward_moments(&signal, &noise, gain).unwrap();
        worst_inversion = worst_inversion.max(invert_moments(&raw, &noise, gain).unwrap().max_abs_diff(&signal));
    }
    if worst_inversion > 1e-12 {
        failures.push(format!("moment inversion {worst_inversion:.1e}"));
    }

    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| reproducible_outputs(3))
    };
    let one = run(1);
    let deterministic = one == run(1) && one == run(4);
    if !deterministic {
        failures.push("outputs differ between runs or thread counts".into());
    }

    verdict(
        "AC11",
        failures.is_empty(),
        t,
        format!(
            "trace {:.1e}, hermiticity {:.1e}, min eigenvalue {:.1e}, dissipator {worst_dissipator:.1e}, inversion {worst_inversion:.1e}, \
             byte-identical across 1/4 threads: {deterministic}{}",
            worst_evolve.0,
            worst_evolve.1,
            worst_evolve.2,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    );
}
