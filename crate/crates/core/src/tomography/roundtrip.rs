use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{coherent_state, DensityMatrix, ModeLayout, C64};

use super::mle::{mle_reconstruct, ReconstructedState, DEFAULT_N_FOCK};
use super::moments::{calibrate_gain, invert_moments, noise_moments_from_samples, raw_moments, GainEstimate, MomentTable};
use super::traces::{extract_mode, generate_traces, project, TemporalMode, TraceSettings};
use super::FIELD_MODE;

/// Synthetic-experiment settings shared by round trip and gain calibration.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineSettings {
    pub gain: f64,
    pub n_h: f64,
    pub n_traces: usize,
    pub n_samples: usize,
    pub sample_period: f64,
    pub n_fock: usize,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { gain: 100.0, n_h: 2.0, n_traces: 50_000, n_samples: 8, sample_period: 100e-9, n_fock: DEFAULT_N_FOCK, seed: 1 }
    }
}

impl PipelineSettings {
    /// Gaussian temporal mode peaking at 40% of the record, width a fifth of it,
    /// with a small carrier detuning so the mode is genuinely complex.
    pub fn true_mode(&self) -> Result<TemporalMode> {
        let span = self.n_samples as f64 * self.sample_period;
        TemporalMode::gaussian(self.n_samples, self.sample_period, 0.4 * span, 0.2 * span, 2.0 / span)
    }

    fn traces(&self, seed: u64) -> TraceSettings {
        TraceSettings { gain: self.gain, n_h: self.n_h, n_traces: self.n_traces, sample_period: self.sample_period, seed }
    }

    /// Independent seeds for the signal, vacuum and calibration runs.
    fn sub_seed(&self, k: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
    }

    pub fn layout(&self) -> Result<ModeLayout> {
        ModeLayout::single(FIELD_MODE, self.n_fock)
    }
}

/// Named single-mode test states.
pub fn named_state(name: &str, layout: &ModeLayout) -> Result<DensityMatrix> {
    match name {
        "vacuum" | "fock0" => Ok(DensityMatrix::vacuum(layout)),
        "fock1" => DensityMatrix::fock(layout, &[(FIELD_MODE, 1)]),
        "coherent0.6" => coherent_state(layout, FIELD_MODE, C64::new(0.6, 0.0)),
        "thermal0.5" => DensityMatrix::thermal(layout, FIELD_MODE, 0.5),
        other => {
            if let Some(a) = other.strip_prefix("coherent") {
                let a: f64 = a.parse().map_err(|_| Error::InvalidArgument(format!("bad coherent amplitude in {other:?}")))?;
                coherent_state(layout, FIELD_MODE, C64::new(a, 0.0))
            } else if let Some(n) = other.strip_prefix("thermal") {
                let n: f64 = n.parse().map_err(|_| Error::InvalidArgument(format!("bad thermal occupation in {other:?}")))?;
                DensityMatrix::thermal(layout, FIELD_MODE, n)
            } else {
                Err(Error::InvalidArgument(format!("unknown state {other:?} (vacuum, fock1, coherent<a>, thermal<n>)")))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundTripReport {
    pub state: String,
    pub settings: PipelineSettings,
    pub mode_overlap: f64,
    /// Top autocorrelation eigenvalue over the median, minus one.
    pub eigenvalue_excess: f64,
    pub spectrum: Vec<f64>,
    pub noise: MomentTable,
    pub raw: MomentTable,
    pub signal: MomentTable,
    pub reconstruction: ReconstructedState,
    pub fidelity: f64,
}

/// generate, extract mode, project, calibrate noise, invert, reconstruct.
pub fn round_trip(state_name: &str, target: &DensityMatrix, settings: &PipelineSettings) -> Result<RoundTripReport> {
    let f_true = settings.true_mode()?;
    let signal = generate_traces(target, &f_true, &settings.traces(settings.sub_seed(0)))?;
    let vacuum_state = DensityMatrix::vacuum(target.layout());
    let vacuum = generate_traces(&vacuum_state, &f_true, &settings.traces(settings.sub_seed(1)))?;
    let extraction = extract_mode(&signal)?;
    let mode = &extraction.mode;
    let noise = noise_moments_from_samples(&project(&vacuum, mode)?, settings.gain)?;
    let raw = raw_moments(&project(&signal, mode)?)?;
    let sig = invert_moments(&raw, &noise, settings.gain)?;
    let layout = settings.layout()?;
    let target_n = if target.layout() == &layout { target.clone() } else { named_state(state_name, &layout)? };
    let reconstruction = mle_reconstruct(&sig, settings.n_fock, settings.sub_seed(2))?.with_targets(&[(state_name, &target_n)])?;
    let fidelity = reconstruction.fidelity_to(state_name).unwrap_or(f64::NAN);
    Ok(RoundTripReport {
        state: state_name.to_string(),
        settings: settings.clone(),
        mode_overlap: mode.overlap(&f_true),
        eigenvalue_excess: extraction.excess_over_median(),
        spectrum: extraction.spectrum.clone(),
        noise,
        raw,
        signal: sig,
        reconstruction,
        fidelity,
    })
}

/// Calibration amplitudes used when none are given.
pub const CALIBRATION_AMPLITUDES: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Clone, Debug, Serialize)]
pub struct GainCalibrationReport {
    pub settings: PipelineSettings,
    pub amplitudes: Vec<f64>,
    pub mean_s: Vec<[f64; 2]>,
    pub estimate: GainEstimate,
    pub relative_error: f64,
}

/// Coherent runs at known real amplitudes, projected on the true mode.
pub fn gain_calibration(amplitudes: &[f64], settings: &PipelineSettings) -> Result<GainCalibrationReport> {
    let f = settings.true_mode()?;
    let max = amplitudes.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let dim = ((4.0 * max * max).ceil() as usize + 8).max(settings.n_fock);
    let layout = ModeLayout::single(FIELD_MODE, dim)?;
    let mut tables = Vec::new();
    let mut alphas = Vec::new();
    for (k, &a) in amplitudes.iter().enumerate() {
        let alpha = C64::new(a, 0.0);
        let rho = coherent_state(&layout, FIELD_MODE, alpha)?;
        let e = generate_traces(&rho, &f, &settings.traces(settings.sub_seed(10 + k as u64)))?;
        tables.push(raw_moments(&project(&e, &f)?)?);
        alphas.push(alpha);
    }
    let estimate = calibrate_gain(&tables, &alphas)?;
    Ok(GainCalibrationReport {
        settings: settings.clone(),
        amplitudes: amplitudes.to_vec(),
        mean_s: tables.iter().map(|t| [t.get(0, 1).re, t.get(0, 1).im]).collect(),
        relative_error: estimate.gain / settings.gain - 1.0,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_round_trip_single_photon() {
        let s = PipelineSettings { n_traces: 20_000, ..Default::default() };
        let l = s.layout().unwrap();
        let r = round_trip("fock1", &named_state("fock1", &l).unwrap(), &s).unwrap();
        assert!(r.mode_overlap > 0.95, "{}", r.mode_overlap);
        assert!((r.signal.get(1, 1).re - 1.0).abs() < 0.1, "{}", r.signal.get(1, 1));
        assert!(r.fidelity > 0.8, "{}", r.fidelity);
    }

    #[test]
    fn named_states() {
        let l = ModeLayout::single(FIELD_MODE, 6).unwrap();
        for n in ["vacuum", "fock1", "coherent0.6", "thermal0.5", "coherent0.3"] {
            named_state(n, &l).unwrap();
        }
        assert!(named_state("squeezed", &l).is_err());
    }
}
