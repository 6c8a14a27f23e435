use std::f64::consts::TAU;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;
use smpd_core::detector::{
    adiabatic_equivalence_check, buffer_pulse, build_reduced_model, build_reset_model, run_with_observables, CircuitParams,
    DerivedRates, ReducedOptions,
};
use smpd_core::hilbert::{DensityMatrix, QUBIT};
use smpd_core::lindblad::{evolve, StepControl};
use smpd_core::metrics::{
    click_probability, efficiency_vs_pulse_length, decay_rate_one_decade, fit_dark_count, fit_efficiency, fit_relaxation, Abscissa,
    DetectionCurve, PulseProtocol, Regime,
};
use smpd_core::tomography::{
    gain_calibration, generate_traces, named_state, orders, round_trip, PipelineSettings, WignerGrid, WIGNER_CONVENTION,
};
use smpd_core::Error;

use crate::config::{Experiment, Options, Resolved};
use crate::output::{col, Cell, Outcome, Table};

pub fn run(r: &Resolved) -> Result<Outcome> {
    match r.experiment {
        Experiment::DeriveParams => derive_params(&r.params),
        Experiment::EfficiencyCurve => efficiency_curve(&r.params, &r.options, &r.hash),
        Experiment::PulseLengthSweep => pulse_length_sweep(&r.params, &r.options),
        Experiment::DarkCount => dark_count(&r.params, &r.options),
        Experiment::ResetDecay => reset_decay(&r.params, &r.options),
        Experiment::AdiabaticCheck => adiabatic_check(&r.params, &r.options),
        Experiment::TomographyRoundtrip => tomography_roundtrip(&r.options),
        Experiment::GainCalibration => gain_calibration_run(&r.options),
    }
}

fn hz(w: f64) -> f64 {
    w / TAU
}

fn linspace(a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(b > a) {
        bail!(Error::InvalidArgument(format!("need >= 2 points over a positive span (got {n} over {a}..{b})")));
    }
    Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect())
}

fn derive_params(p: &CircuitParams) -> Result<Outcome> {
    let d = DerivedRates::compute(p)?;
    let mut rows: Vec<(&str, f64, &'static str, &str)> = vec![
        ("g3_hz", hz(d.g3.norm()), "Hz", "three-wave rate used by the models"),
        ("g3_closed_form_hz", hz(d.g3_closed_form.norm()), "Hz", "three-wave rate from pump amplitude and cross-Kerrs"),
        ("kappa_nl_hz", hz(d.kappa_nl), "Hz", "nonlinear damping used by the models"),
        ("kappa_nl_closed_form_hz", hz(d.kappa_nl_closed_form), "Hz", "nonlinear damping from the closed form"),
        ("delta_nl_hz", hz(d.delta_nl), "Hz", "frequency pull of the eliminated waste"),
        ("eta", d.eta, "", "matched-damping efficiency"),
        ("f_p0_hz", d.f_p0_hz, "Hz", "zero-power pump frequency"),
        ("f_p_hz", hz(d.omega_p), "Hz", "pump frequency at the configured power"),
        ("pump_slope_hz", hz(d.pump_slope), "Hz", "pump frequency shift per unit |xi_p|^2"),
        ("spurious_f_p_hz", hz(d.spurious_omega_p), "Hz", "pump frequency of the spurious higher-order line"),
        ("elimination_ratio", d.elimination_ratio, "", "|g3| / kappa_w"),
    ];
    if let (Some(e), Some(k)) = (d.epsilon_w, d.kappa_reset) {
        rows.push(("epsilon_w_hz", hz(e), "Hz", "waste drive amplitude for reset"));
        rows.push(("kappa_reset_per_s", k, "1/s", "reset rate"));
        rows.push(("reset_time_s", 1.0 / k, "s", "reset time constant"));
    }
    if let (Some(kw), Some(kq)) = (d.purcell_kappa_w, d.purcell_kappa_q) {
        rows.push(("purcell_kappa_w_hz", hz(kw), "Hz", "waste damping through the filter"));
        rows.push(("purcell_kappa_q_hz", hz(kq), "Hz", "qubit decay through waste and filter"));
    }
    let mut t = Table::new(None, vec![col("quantity", "", "derived quantity"), col("value", "see unit", "value"), col("unit", "", "unit of value"), col("description", "", "meaning")]);
    let mut out = Outcome::default();
    for (name, v, unit, desc) in rows {
        t.push(vec![name.into(), v.into(), unit.into(), desc.into()]);
        out.num(name, v);
    }
    out.tables.push(t);
    Ok(out)
}

fn efficiency_curve(p: &CircuitParams, o: &Options, hash: &str) -> Result<Outcome> {
    let mut n_bars = o.n_bars.clone();
    n_bars.sort_by(f64::total_cmp);
    let d = DerivedRates::compute(p)?;
    let opts = ReducedOptions { qubit_decay: true, ..ReducedOptions::default() };
    let t = o.probe_length_s;
    let pes = n_bars
        .par_iter()
        .map(|&n| -> smpd_core::Result<f64> {
            let g = build_reduced_model(p, &opts, Some(&buffer_pulse(p, n, 0.0, t)?))?;
            let traj = evolve(&g, &DensityMatrix::vacuum(g.layout()), &[0.0, t], &StepControl::default())?;
            traj.final_state().level_population(QUBIT, 1)
        })
        .collect::<smpd_core::Result<Vec<f64>>>()?;
    let curve = DetectionCurve::new(Abscissa::PhotonNumber, "reduced", n_bars.iter().copied().zip(pes.iter().copied()).collect(), hash)?;
    let fit = fit_efficiency(&curve)?;
    let mut table = Table::new(
        None,
        vec![
            col("n_bar", "photons", "mean photon number of the square probe"),
            col("p_e", "", "qubit excited population at the end of the probe"),
            col("p_e_ansatz", "", "1 - exp(-eta n_bar) with the closed-form eta"),
        ],
    );
    for (n, pe) in &curve.points {
        table.push(vec![(*n).into(), (*pe).into(), click_probability(*n, d.eta)?.into()]);
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.num("eta_fit", fit.value("eta"));
    out.num("eta_fit_sigma", fit.get("eta").map_or(f64::NAN, |x| x.sigma));
    out.num("p0_fit", fit.value("p0"));
    out.num("eta_formula", d.eta);
    out.put("fit_converged", fit.converged);
    Ok(out)
}

fn pulse_length_sweep(p: &CircuitParams, o: &Options) -> Result<Outcome> {
    let mut t_b = o.t_b_s.clone();
    t_b.sort_by(f64::total_cmp);
    let protocol = PulseProtocol {
        tail: o.readout_tail_s,
        n_bars: o.probe_n_bars.clone(),
        fast_buffer_scale: o.fast_buffer_scale,
        n_buffer: o.pulse_n_buffer,
    };
    let curves = efficiency_vs_pulse_length(p, &Regime::ALL, &t_b, &protocol)?;
    let mut cols = vec![col("t_b_s", "s", "probe length")];
    for r in Regime::ALL {
        cols.push(col(&format!("eta_{}", r.label()), "", &format!("fitted efficiency, regime {}", r.label())));
    }
    let mut table = Table::new(None, cols);
    for (k, t) in t_b.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*t).into()];
        row.extend(curves.iter().map(|c| Cell::F(c.points[k].1)));
        table.push(row);
    }
    let measured = &curves[3].points;
    let (t_max, eta_max) = measured.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let eta = |r: usize, k: usize| curves[r].points[k].1;
    let ordered = (0..t_b.len()).all(|k| eta(0, k) >= eta(1, k) && eta(0, k) >= eta(2, k) && eta(2, k) >= eta(3, k));
    let mut out = Outcome::default();
    out.tables.push(table);
    out.num("eta_max_measured", eta_max);
    out.num("t_b_at_max_s", t_max);
    out.put("regimes_ordered", ordered);
    Ok(out)
}

fn dark_count(p: &CircuitParams, o: &Options) -> Result<Outcome> {
    let opts = ReducedOptions { qubit_decay: true, thermal: true, ..ReducedOptions::default() };
    let g = build_reduced_model(p, &opts, None)?;
    let rho0 = DensityMatrix::diagonal(g.layout(), QUBIT, &[1.0 - p.p_excited_initial, p.p_excited_initial])?;
    let times = linspace(0.0, o.dark_t_max_s, o.dark_points)?;
    let traj = run_with_observables(&g, &rho0, &times, &StepControl::default())?;
    let pe = traj.observable("p_e").expect("recorded").to_vec();
    let series: Vec<(f64, f64)> = times.iter().copied().zip(pe.iter().copied()).collect();
    let fit = fit_dark_count(&series)?;
    let lin = |t: f64| fit.linear.value("p0") + fit.linear.value("gamma_dc") * t;
    let exp = |t: f64| {
        fit.exponential.as_ref().map_or(f64::NAN, |e| e.value("p_inf") + (e.value("p0") - e.value("p_inf")) * (-e.value("gamma") * t).exp())
    };
    let mut table = Table::new(
        None,
        vec![
            col("t_p_s", "s", "detection window"),
            col("p_e", "", "qubit excited population without input"),
            col("p_e_linear", "", "linear dark-count fit"),
            col("p_e_exponential", "", "saturating fit (NaN when it fell back)"),
        ],
    );
    for &(t, y) in &series {
        table.push(vec![t.into(), y.into(), lin(t).into(), exp(t).into()]);
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.num("p0", fit.linear.value("p0"));
    out.num("gamma_dc_per_s", fit.linear.value("gamma_dc"));
    if let Some(e) = &fit.exponential {
        out.num("p_inf", e.value("p_inf"));
        out.num("gamma_per_s", e.value("gamma"));
    }
    out.put("fell_back_to_linear", fit.fell_back_to_linear);
    Ok(out)
}

fn reset_decay(p: &CircuitParams, o: &Options) -> Result<Outcome> {
    let mut p = p.clone();
    p.n_buffer = o.reset_n_buffer;
    let d = DerivedRates::compute(&p)?;
    let eps: Vec<f64> = if o.reset_epsilon_w_hz.is_empty() {
        match d.epsilon_w {
            Some(e) => vec![e],
            None => bail!(Error::Config("reset-decay needs epsilon_w_hz, reset_time_s or reset_epsilon_w_hz".into())),
        }
    } else {
        o.reset_epsilon_w_hz.iter().map(|e| e * TAU).collect()
    };
    let runs = eps
        .par_iter()
        .map(|&e| -> smpd_core::Result<(f64, f64, f64, Vec<f64>, Vec<f64>)> {
            let formula = smpd_core::detector::reset_rate(e, d.kappa_nl, p.kappa_b, p.kappa_w);
            let t_max = o.reset_t_max_s.unwrap_or(8.0 / formula);
            let times = linspace(0.0, t_max, o.reset_points).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let g = build_reset_model(&p, e, &ReducedOptions::default())?;
            let rho0 = DensityMatrix::fock(g.layout(), &[(QUBIT, 1)])?;
            let traj = run_with_observables(&g, &rho0, &times, &StepControl::default())?;
            let pe = traj.observable("p_e").expect("recorded").to_vec();
            let series: Vec<(f64, f64)> = times.iter().copied().zip(pe.iter().copied()).collect();
            let rate = decay_rate_one_decade(&series)?;
            let fit = fit_relaxation(&series)?;
            Ok((formula, rate, fit.value("gamma"), times, pe))
        })
        .collect::<smpd_core::Result<Vec<_>>>()?;
    let mut trace = Table::new(
        None,
        vec![col("epsilon_w_hz", "Hz", "waste drive amplitude"), col("t_s", "s", "time"), col("p_e", "", "qubit excited population")],
    );
    let mut rates = Table::new(
        Some("rates"),
        vec![
            col("epsilon_w_hz", "Hz", "waste drive amplitude"),
            col("kappa_reset_formula_per_s", "1/s", "closed-form reset rate"),
            col("decay_rate_per_s", "1/s", "log-linear decay rate of p_e over its first decade"),
            col("ratio", "", "decay rate over closed-form rate"),
            col("tau_s", "s", "inverse decay rate"),
            col("relaxation_fit_rate_per_s", "1/s", "rate of an exponential-plus-offset fit over the whole window"),
        ],
    );
    for (e, (formula, rate, fit, times, pe)) in eps.iter().zip(&runs) {
        for (t, y) in times.iter().zip(pe) {
            trace.push(vec![hz(*e).into(), (*t).into(), (*y).into()]);
        }
        rates.push(vec![hz(*e).into(), (*formula).into(), (*rate).into(), (rate / formula).into(), (1.0 / rate).into(), (*fit).into()]);
    }
    let mut out = Outcome::default();
    out.tables.push(trace);
    out.tables.push(rates);
    let (formula, rate, fit, _, _) = &runs[0];
    out.num("epsilon_w_hz", hz(eps[0]));
    out.num("kappa_reset_per_s", *formula);
    out.num("decay_rate_per_s", *rate);
    out.num("tau_s", 1.0 / rate);
    out.num("rate_ratio", rate / formula);
    out.num("relaxation_fit_rate_per_s", *fit);
    Ok(out)
}

fn adiabatic_check(p: &CircuitParams, o: &Options) -> Result<Outcome> {
    let drive = buffer_pulse(p, o.drive_n_bar, 0.0, o.drive_duration_s)?;
    let times = linspace(0.0, o.drive_duration_s, o.adiabatic_points)?;
    let r = adiabatic_equivalence_check(p, &drive, &times)?;
    let mut table = Table::new(
        None,
        vec![
            col("t_s", "s", "time"),
            col("p_e_full", "", "qubit excitation, three-mode model"),
            col("p_e_reduced", "", "qubit excitation, waste eliminated"),
            col("n_b_full", "photons", "buffer occupation, three-mode model"),
            col("n_b_reduced", "photons", "buffer occupation, waste eliminated"),
        ],
    );
    for k in 0..times.len() {
        table.push(vec![times[k].into(), r.pe_full[k].into(), r.pe_reduced[k].into(), r.nb_full[k].into(), r.nb_reduced[k].into()]);
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.num("max_dev_pe", r.max_dev_pe);
    out.num("rms_dev_pe", r.rms_dev_pe);
    out.num("max_dev_nb", r.max_dev_nb);
    out.num("regime_parameter", r.regime_parameter);
    out.put("regime_warning", r.regime_warning);
    Ok(out)
}

fn pipeline(o: &Options) -> PipelineSettings {
    PipelineSettings {
        gain: o.gain,
        n_h: o.n_h,
        n_traces: o.n_traces,
        n_samples: o.n_samples,
        sample_period: o.sample_period_s,
        n_fock: o.n_fock,
        seed: o.seed,
    }
}

fn tomography_roundtrip(o: &Options) -> Result<Outcome> {
    let s = pipeline(o);
    let layout = s.layout()?;
    let target = named_state(&o.state, &layout)?;
    let r = round_trip(&o.state, &target, &s)?;
    let mut moments = Table::new(
        None,
        vec![
            col("n", "", "power of the creation operator"),
            col("m", "", "power of the annihilation operator"),
            col("raw_re", "", "Re <(S*)^n S^m> of the signal run"),
            col("raw_im", "", "Im <(S*)^n S^m> of the signal run"),
            col("noise_re", "", "Re <h^n (h+)^m> from the vacuum run"),
            col("noise_im", "", "Im <h^n (h+)^m> from the vacuum run"),
            col("signal_re", "", "Re <(a+)^n a^m> after inversion"),
            col("signal_im", "", "Im <(a+)^n a^m> after inversion"),
            col("signal_sigma", "", "1-sigma error of the inverted moment"),
        ],
    );
    for (n, m) in orders() {
        let (a, b, c) = (r.raw.get(n, m), r.noise.get(n, m), r.signal.get(n, m));
        moments.push(vec![n.into(), m.into(), a.re.into(), a.im.into(), b.re.into(), b.im.into(), c.re.into(), c.im.into(), r.signal.sigma(n, m).into()]);
    }
    let mut rho = Table::new(
        Some("rho"),
        vec![col("row", "", "Fock index"), col("col", "", "Fock index"), col("re", "", "Re rho"), col("im", "", "Im rho")],
    );
    let m = r.reconstruction.rho.matrix();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rho.push(vec![i.into(), j.into(), m[(i, j)].re.into(), m[(i, j)].im.into()]);
        }
    }
    let grid = WignerGrid::new(&r.reconstruction.rho, o.wigner_half_width, o.wigner_points)?;
    let mut wig = Table::new(
        Some("wigner"),
        vec![col("re_alpha", "", "Re alpha"), col("im_alpha", "", "Im alpha"), col("w", "", "Wigner function of the reconstruction")],
    );
    for (i, row) in grid.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            wig.push(vec![grid.axis[j].into(), grid.axis[i].into(), (*v).into()]);
        }
    }
    let mut spec = Table::new(Some("spectrum"), vec![col("k", "", "rank"), col("eigenvalue", "", "autocorrelation eigenvalue")]);
    for (k, v) in r.spectrum.iter().enumerate() {
        spec.push(vec![k.into(), (*v).into()]);
    }
    let mut out = Outcome::default();
    out.tables.extend([moments, rho, wig, spec]);
    if o.save_traces {
        let ens = generate_traces(&target, &s.true_mode()?, &smpd_core::tomography::TraceSettings {
            gain: s.gain,
            n_h: s.n_h,
            n_traces: s.n_traces,
            sample_period: s.sample_period,
            seed: s.seed,
        })?;
        let mut bytes = Vec::new();
        ens.write_to(&mut bytes)?;
        out.blobs.push(("traces", bytes));
    }
    out.put("state", o.state.clone());
    out.num("fidelity", r.fidelity);
    out.num("mode_overlap", r.mode_overlap);
    out.num("eigenvalue_excess", r.eigenvalue_excess);
    out.num("n_mean", r.signal.get(1, 1).re);
    out.num("n_mean_sigma", r.signal.sigma(1, 1));
    out.num("distance", r.reconstruction.distance);
    out.put("converged", r.reconstruction.converged);
    out.put("wigner_convention", WIGNER_CONVENTION);
    out.put("reconstruction", json!(r.reconstruction));
    Ok(out)
}

fn gain_calibration_run(o: &Options) -> Result<Outcome> {
    let s = pipeline(o);
    let r = gain_calibration(&o.calibration_amplitudes, &s)?;
    let mut table = Table::new(
        None,
        vec![col("amplitude", "", "known coherent amplitude <a>"), col("mean_s_re", "", "Re <S>"), col("mean_s_im", "", "Im <S>")],
    );
    for (a, m) in r.amplitudes.iter().zip(&r.mean_s) {
        table.push(vec![(*a).into(), m[0].into(), m[1].into()]);
    }
    let mut out = Outcome::default();
    out.tables.push(table);
    out.num("gain", r.estimate.gain);
    out.num("gain_sigma", r.estimate.sigma);
    out.num("gain_true", s.gain);
    out.num("relative_error", r.relative_error);
    Ok(out)
}
