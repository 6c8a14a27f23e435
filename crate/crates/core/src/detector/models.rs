use serde::Serialize;

use super::params::CircuitParams;
use super::rates::DerivedRates;
use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation, level_projector, number, sigma_z, DensityMatrix, ModeLayout, Operator, BUFFER, C64, QUBIT, WASTE,
};
use crate::lindblad::{evolve, Envelope, LindbladGenerator, StepControl, Trajectory};

/// Pump switching profile: unit amplitude with tanh edges of the configured
/// ramp constant.
pub fn pump_envelope(params: &CircuitParams, t_on: f64, t_off: f64) -> Envelope {
    Envelope::smooth_rect(1.0, t_on, t_off, params.pump_ramp)
}

/// Square buffer drive `eps = sqrt(kappa_b) b_in` delivering `n_bar` photons
/// over `[t_on, t_off)`.
pub fn buffer_pulse(params: &CircuitParams, n_bar: f64, t_on: f64, t_off: f64) -> Result<Envelope> {
    if !(n_bar >= 0.0) || !(t_off > t_on) {
        return Err(Error::InvalidArgument(format!("pulse needs n_bar >= 0 and t_off > t_on (got {n_bar}, {t_on}..{t_off})")));
    }
    let flux = n_bar / (t_off - t_on);
    Ok(Envelope::smooth_rect((params.kappa_b * flux).sqrt(), t_on, t_off, 0.0))
}

/// Which optional terms enter the buffer-qubit models.
#[derive(Clone, Debug, Default)]
pub struct ReducedOptions {
    /// `Delta_nl b'b s s'` frequency pull.
    pub delta_nl: bool,
    /// Buffer self-Kerr.
    pub chi_bb: bool,
    /// Qubit-buffer cross-Kerr.
    pub chi_qb: bool,
    pub qubit_decay: bool,
    pub dephasing: bool,
    /// Thermal excitation `sqrt(gamma_up) s'`.
    pub thermal: bool,
    /// Pump profile; `kappa_nl` and `Delta_nl` follow `|s(t)|^2`. `None`
    /// means the pump is on throughout.
    pub pump: Option<Envelope>,
}

impl ReducedOptions {
    /// Every optional term on, pump always on.
    pub fn all() -> Self {
        Self { delta_nl: true, chi_bb: true, chi_qb: true, qubit_decay: true, dephasing: true, thermal: true, pump: None }
    }

    pub fn with_pump(mut self, pump: Envelope) -> Self {
        self.pump = Some(pump);
        self
    }
}

fn check_drive_truncation(envelope: &Envelope, damping: f64, dim: usize) -> Result<()> {
    if damping <= 0.0 {
        return Ok(());
    }
    let amplitude = 2.0 * envelope.peak() / damping;
    if amplitude * amplitude > dim as f64 / 4.0 {
        return Err(Error::TruncationTooSmall { amplitude, dim });
    }
    Ok(())
}

fn buffer_drive_coupling(layout: &ModeLayout) -> Result<Operator> {
    // A = i b gives eps [b - b', rho] for real eps.
    Ok(annihilation(layout, BUFFER)?.scale(C64::new(0.0, 1.0)))
}

fn add_qubit_channels(mut g: LindbladGenerator, p: &CircuitParams, decay: bool, dephasing: bool, thermal: bool) -> Result<LindbladGenerator> {
    let layout = g.layout().clone();
    let s = annihilation(&layout, QUBIT)?;
    if decay && p.kappa_q > 0.0 {
        g = g.with_collapse("kappa_q", p.kappa_q, s.clone())?;
    }
    if dephasing && p.kappa_phi > 0.0 {
        g = g.with_collapse("kappa_phi", p.kappa_phi / 2.0, sigma_z(&layout, QUBIT)?)?;
    }
    if thermal && p.gamma_up > 0.0 {
        g = g.with_collapse("gamma_up", p.gamma_up, s.adjoint())?;
    }
    Ok(g)
}

/// Three-mode model (buffer, qubit, waste) in the rotating frame.
///
/// Drives enter as `eps(t) A + h.c.` with `A = i b` on the buffer and
/// `A = w` on the waste. Qubit channels use `kappa_q`, `kappa_phi` and
/// `gamma_up` from `params`; zero them there to switch a channel off.
pub fn build_full_model(
    params: &CircuitParams,
    buffer_drive: Option<&Envelope>,
    waste_drive: Option<&Envelope>,
) -> Result<LindbladGenerator> {
    build_full_model_pumped(params, None, buffer_drive, waste_drive)
}

/// As [`build_full_model`] with the three-wave term switched by `pump`.
pub fn build_full_model_pumped(
    params: &CircuitParams,
    pump: Option<&Envelope>,
    buffer_drive: Option<&Envelope>,
    waste_drive: Option<&Envelope>,
) -> Result<LindbladGenerator> {
    let rates = DerivedRates::compute(params)?;
    let layout = ModeLayout::detector(params.n_buffer, params.n_waste)?;
    let b = annihilation(&layout, BUFFER)?;
    let w = annihilation(&layout, WASTE)?;
    let s = annihilation(&layout, QUBIT)?;
    let nb = number(&layout, BUFFER)?;
    let nw = number(&layout, WASTE)?;
    let ne = level_projector(&layout, QUBIT, 1)?;
    let bd = b.adjoint();
    let wd = w.adjoint();

    let three_wave = &(&b * &wd) * &s.adjoint();
    let mut h = nw.scale(params.delta);
    h = &h - &(&(&(&bd * &bd) * &b) * &b).scale(params.chi_bb / 2.0);
    h = &h - &(&(&(&wd * &wd) * &w) * &w).scale(params.chi_ww / 2.0);
    h = &h - &(&nb * &ne).scale(params.chi_qb);
    h = &h - &(&nw * &ne).scale(params.chi_qw);
    h = &h - &(&nb * &nw).scale(params.chi_bw);
    if pump.is_none() {
        let term = three_wave.scale(rates.g3);
        h = &(&h + &term) + &term.adjoint();
    }

    let mut g = LindbladGenerator::new(h)?
        .with_collapse("kappa_w", params.kappa_w, w.clone())?
        .with_collapse("kappa_b", params.kappa_b, b.clone())?;
    g = add_qubit_channels(g, params, true, true, true)?;
    if let Some(env) = pump {
        g = g.with_drive("pump", env.clone(), three_wave.scale(rates.g3))?;
    }
    if let Some(env) = buffer_drive {
        check_drive_truncation(env, rates.kappa_nl + params.kappa_b, params.n_buffer)?;
        g = g.with_drive("buffer", env.clone(), buffer_drive_coupling(&layout)?)?;
    }
    if let Some(env) = waste_drive {
        check_drive_truncation(env, params.kappa_w, params.n_waste)?;
        g = g.with_drive("waste", env.clone(), w)?;
    }
    Ok(g)
}

/// Buffer-qubit model with the waste eliminated: `kappa_nl D[b s']`,
/// `kappa_b D[b]` and the buffer drive, plus the optional terms in `opts`.
pub fn build_reduced_model(params: &CircuitParams, opts: &ReducedOptions, buffer_drive: Option<&Envelope>) -> Result<LindbladGenerator> {
    let rates = DerivedRates::compute(params)?;
    let layout = ModeLayout::buffer_qubit(params.n_buffer)?;
    let b = annihilation(&layout, BUFFER)?;
    let s = annihilation(&layout, QUBIT)?;
    let nb = number(&layout, BUFFER)?;
    let bd = b.adjoint();

    let mut h = Operator::zero(&layout);
    if opts.chi_bb {
        h = &h - &(&(&(&bd * &bd) * &b) * &b).scale(params.chi_bb / 2.0);
    }
    if opts.chi_qb {
        h = &h - &(&nb * &level_projector(&layout, QUBIT, 1)?).scale(params.chi_qb);
    }
    let pull = &nb * &level_projector(&layout, QUBIT, 0)?;
    if opts.delta_nl && opts.pump.is_none() {
        h = &h + &pull.scale(rates.delta_nl);
    }

    let jump = &b * &s.adjoint();
    let mut g = LindbladGenerator::new(h)?;
    g = match &opts.pump {
        None => g.with_collapse("kappa_nl", rates.kappa_nl, jump)?,
        Some(env) => g.with_modulated_collapse("kappa_nl", rates.kappa_nl, jump, env.clone())?,
    };
    g = g.with_collapse("kappa_b", params.kappa_b, b)?;
    g = add_qubit_channels(g, params, opts.qubit_decay, opts.dephasing, opts.thermal)?;
    if let (true, Some(env)) = (opts.delta_nl, &opts.pump) {
        if rates.delta_nl != 0.0 {
            // eps A + eps* A' with Hermitian A and real eps = Delta_nl |s|^2 / 2.
            let env = env.clone();
            let half = rates.delta_nl / 2.0;
            let peak = half.abs() * env.peak().powi(2);
            g = g.with_drive("delta_nl", Envelope::custom(move |t| C64::new(half * env.eval(t).norm_sqr(), 0.0), peak), pull)?;
        }
    }
    if let Some(env) = buffer_drive {
        check_drive_truncation(env, rates.kappa_nl + params.kappa_b, params.n_buffer)?;
        g = g.with_drive("buffer", env.clone(), buffer_drive_coupling(&layout)?)?;
    }
    Ok(g)
}

/// Reset dynamics with a waste drive `epsilon_w` (rad/s): collapse operator
/// `sqrt(kappa_nl) (b s' + epsilon_w / g3)` and `kappa_b D[b]`.
pub fn build_reset_model(params: &CircuitParams, epsilon_w: f64, opts: &ReducedOptions) -> Result<LindbladGenerator> {
    let (layout, rates, shift) = reset_setup(params, epsilon_w)?;
    let b = annihilation(&layout, BUFFER)?;
    let s = annihilation(&layout, QUBIT)?;
    let displaced = &(&b * &s.adjoint()) + &Operator::identity(&layout).scale(shift);
    let g = LindbladGenerator::empty(&layout)
        .with_collapse("kappa_nl", rates.kappa_nl, displaced)?
        .with_collapse("kappa_b", params.kappa_b, b)?;
    add_qubit_channels(g, params, opts.qubit_decay, opts.dephasing, opts.thermal)
}

/// The same dynamics as [`build_reset_model`] written as `kappa_nl D[b s']`
/// plus the coherent term `eps_nl [b s' - b' s, rho]` (for real `g3`).
pub fn build_reset_model_hamiltonian_form(params: &CircuitParams, epsilon_w: f64, opts: &ReducedOptions) -> Result<LindbladGenerator> {
    let (layout, rates, shift) = reset_setup(params, epsilon_w)?;
    let b = annihilation(&layout, BUFFER)?;
    let s = annihilation(&layout, QUBIT)?;
    let jump = &b * &s.adjoint();
    // D[L + c] = D[L] - i[H, .] with H = (i/2)(c* L - c L').
    let c = shift * rates.kappa_nl;
    let h = (&jump.scale(c.conj()) - &jump.adjoint().scale(c)).scale(C64::new(0.0, 0.5));
    let g = LindbladGenerator::new(h)?
        .with_collapse("kappa_nl", rates.kappa_nl, jump)?
        .with_collapse("kappa_b", params.kappa_b, b)?;
    add_qubit_channels(g, params, opts.qubit_decay, opts.dephasing, opts.thermal)
}

fn reset_setup(params: &CircuitParams, epsilon_w: f64) -> Result<(ModeLayout, DerivedRates, C64)> {
    if !(epsilon_w >= 0.0) || !epsilon_w.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon_w = {epsilon_w} must be real and >= 0")));
    }
    let rates = DerivedRates::compute(params)?;
    let shift = if epsilon_w == 0.0 {
        C64::new(0.0, 0.0)
    } else if rates.g3.norm() > 0.0 {
        C64::new(epsilon_w, 0.0) / rates.g3
    } else {
        return Err(Error::InvalidArgument("reset drive needs a nonzero three-wave rate".into()));
    };
    Ok((ModeLayout::buffer_qubit(params.n_buffer)?, rates, shift))
}

/// Full vs reduced model comparison on one drive.
#[derive(Clone, Debug, Serialize)]
pub struct AdiabaticReport {
    pub max_dev_pe: f64,
    pub rms_dev_pe: f64,
    pub max_dev_nb: f64,
    pub rms_dev_nb: f64,
    /// `4 |g3| / kappa_w`; above 0.5 the elimination is not expected to be accurate.
    pub regime_parameter: f64,
    pub regime_warning: bool,
    pub times: Vec<f64>,
    pub pe_full: Vec<f64>,
    pub pe_reduced: Vec<f64>,
    pub nb_full: Vec<f64>,
    pub nb_reduced: Vec<f64>,
}

/// Runs both models from vacuum/|g> under `buffer_drive` and compares the
/// qubit excitation and buffer occupation.
pub fn adiabatic_equivalence_check(params: &CircuitParams, buffer_drive: &Envelope, times: &[f64]) -> Result<AdiabaticReport> {
    adiabatic_equivalence_check_with(params, buffer_drive, times, &StepControl::default())
}

pub fn adiabatic_equivalence_check_with(
    params: &CircuitParams,
    buffer_drive: &Envelope,
    times: &[f64],
    control: &StepControl,
) -> Result<AdiabaticReport> {
    let rates = DerivedRates::compute(params)?;
    let regime_parameter = 4.0 * rates.g3.norm() / params.kappa_w;
    let regime_warning = regime_parameter > 0.5;
    if regime_warning {
        log::warn!("4|g3|/kappa_w = {regime_parameter:.3} > 0.5: outside the adiabatic-elimination regime");
    }
    let full = build_full_model(params, Some(buffer_drive), None)?;
    let reduced = build_reduced_model(params, &ReducedOptions::all(), Some(buffer_drive))?;
    let (pe_full, nb_full) = pe_and_nb(&full, times, control)?;
    let (pe_reduced, nb_reduced) = pe_and_nb(&reduced, times, control)?;
    let stats = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
        (max, rms)
    };
    let (max_dev_pe, rms_dev_pe) = stats(&pe_full, &pe_reduced);
    let (max_dev_nb, rms_dev_nb) = stats(&nb_full, &nb_reduced);
    Ok(AdiabaticReport {
        max_dev_pe,
        rms_dev_pe,
        max_dev_nb,
        rms_dev_nb,
        regime_parameter,
        regime_warning,
        times: times.to_vec(),
        pe_full,
        pe_reduced,
        nb_full,
        nb_reduced,
    })
}

fn pe_and_nb(g: &LindbladGenerator, times: &[f64], control: &StepControl) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = g.layout();
    let mut traj = evolve(g, &DensityMatrix::vacuum(layout), times, control)?;
    let pe = traj.observe("p_e", &level_projector(layout, QUBIT, 1)?)?.to_vec();
    let nb = traj.observe("n_b", &number(layout, BUFFER)?)?.to_vec();
    Ok((pe, nb))
}

/// Evolves `g` from `rho0` and records `p_e` (qubit excited population) and
/// `n_b` (buffer occupation).
pub fn run_with_observables(g: &LindbladGenerator, rho0: &DensityMatrix, times: &[f64], control: &StepControl) -> Result<Trajectory> {
    let layout = g.layout();
    let mut traj = evolve(g, rho0, times, control)?;
    traj.observe("p_e", &level_projector(layout, QUBIT, 1)?)?;
    traj.observe("n_b", &number(layout, BUFFER)?)?;
    Ok(traj)
}
