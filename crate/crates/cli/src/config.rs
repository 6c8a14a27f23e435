use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use smpd_core::detector::{CircuitParams, DeviceConfig, BUNDLED_DEVICE_JSON};
use smpd_core::report::json_hash;
use smpd_core::Error;

pub const BUNDLED_NAME: &str = "paper_device.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DeriveParams,
    EfficiencyCurve,
    PulseLengthSweep,
    DarkCount,
    ResetDecay,
    AdiabaticCheck,
    TomographyRoundtrip,
    GainCalibration,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::DeriveParams => "derive-params",
            Experiment::EfficiencyCurve => "efficiency-curve",
            Experiment::PulseLengthSweep => "pulse-length-sweep",
            Experiment::DarkCount => "dark-count",
            Experiment::ResetDecay => "reset-decay",
            Experiment::AdiabaticCheck => "adiabatic-check",
            Experiment::TomographyRoundtrip => "tomography-roundtrip",
            Experiment::GainCalibration => "gain-calibration",
        }
    }
}

/// Experiment settings that are not part of the device description.
/// Every key can be overridden with `--set` and swept like a device key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub seed: u64,
    // efficiency-curve
    pub n_bars: Vec<f64>,
    pub probe_length_s: f64,
    // pulse-length-sweep
    pub t_b_s: Vec<f64>,
    pub readout_tail_s: f64,
    pub probe_n_bars: Vec<f64>,
    pub fast_buffer_scale: f64,
    pub pulse_n_buffer: usize,
    // dark-count
    pub dark_t_max_s: f64,
    pub dark_points: usize,
    // reset-decay; an empty list uses the device epsilon_w
    pub reset_epsilon_w_hz: Vec<f64>,
    /// `null` runs for eight formula time constants.
    pub reset_t_max_s: Option<f64>,
    pub reset_points: usize,
    pub reset_n_buffer: usize,
    // adiabatic-check
    pub drive_n_bar: f64,
    pub drive_duration_s: f64,
    pub adiabatic_points: usize,
    // tomography-roundtrip, gain-calibration
    pub state: String,
    pub n_traces: usize,
    pub gain: f64,
    pub n_h: f64,
    pub n_samples: usize,
    pub sample_period_s: f64,
    pub n_fock: usize,
    pub wigner_half_width: f64,
    pub wigner_points: usize,
    pub save_traces: bool,
    pub calibration_amplitudes: Vec<f64>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            seed: 1,
            n_bars: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0],
            probe_length_s: 2e-6,
            t_b_s: vec![0.25e-6, 0.5e-6, 1e-6, 1.5e-6, 2e-6, 2.5e-6, 3e-6, 4e-6, 6e-6],
            readout_tail_s: 500e-9,
            probe_n_bars: vec![0.05, 0.1, 0.2],
            fast_buffer_scale: 20.0,
            pulse_n_buffer: 3,
            dark_t_max_s: 10e-6,
            dark_points: 21,
            reset_epsilon_w_hz: Vec::new(),
            reset_t_max_s: None,
            reset_points: 81,
            reset_n_buffer: 2,
            drive_n_bar: 0.5,
            drive_duration_s: 4e-6,
            adiabatic_points: 41,
            state: "fock1".into(),
            n_traces: 50_000,
            gain: 100.0,
            n_h: 2.0,
            n_samples: 8,
            sample_period_s: 100e-9,
            n_fock: 6,
            wigner_half_width: 0.85,
            wigner_points: 35,
            save_traces: false,
            calibration_amplitudes: vec![0.5, 1.0, 2.0],
        }
    }
}

/// Device JSON from `path`; a missing `paper_device.json` (or no path)
/// resolves to the bundled device file.
pub fn load_device(path: Option<&Path>) -> Result<Value> {
    let text = match path {
        None => BUNDLED_DEVICE_JSON.to_string(),
        Some(p) if !p.exists() && p.file_name().is_some_and(|n| n == BUNDLED_NAME) => BUNDLED_DEVICE_JSON.to_string(),
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
    };
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("device config is not valid JSON: {e}")))?;
    if !v.is_object() {
        return Err(Error::Config("device config must be a JSON object".into()).into());
    }
    Ok(v)
}

fn parse_value(raw: &str, current: &Value) -> Result<Value> {
    let raw = raw.trim();
    if let Value::Array(_) = current {
        if raw.starts_with('[') {
            return Ok(serde_json::from_str(raw).map_err(|e| Error::Config(format!("bad list {raw:?}: {e}")))?);
        }
        let items = raw
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| serde_json::from_str::<Value>(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string())))
            .collect();
        return Ok(Value::Array(items));
    }
    Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())))
}

/// Applies `key=value` to whichever of the two documents defines `key`.
pub fn apply_override(device: &mut Value, options: &mut Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!(Error::Config(format!("override {assignment:?} is not key=value")));
    };
    let key = key.trim();
    for doc in [device, options] {
        if let Some(slot) = doc.as_object_mut().and_then(|m| m.get_mut(key)) {
            *slot = parse_value(raw, slot)?;
            return Ok(());
        }
    }
    bail!(Error::Config(format!("unknown config key `{key}`")))
}

/// Whether `key` holds a number (or a nullable number, or a list of numbers).
pub fn is_numeric_key(device: &Value, options: &Value, key: &str) -> bool {
    let v = device.get(key).or_else(|| options.get(key));
    match v {
        Some(Value::Number(_)) => true,
        Some(Value::Null) => device.get(key).is_some() && !matches!(key, "state"),
        Some(Value::Array(a)) => a.iter().all(Value::is_number),
        _ => false,
    }
}

/// Fully resolved run description.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub experiment: Experiment,
    pub params: CircuitParams,
    pub options: Options,
    pub snapshot: Value,
    pub hash: String,
}

impl Resolved {
    pub fn new(experiment: Experiment, device: Value, options: Value) -> Result<Self> {
        let cfg = DeviceConfig::from_json_value(device)?;
        let params = CircuitParams::from_config(&cfg)?;
        let opts: Options = serde_json::from_value(options).map_err(|e| Error::Config(format!("experiment options: {e}")))?;
        let mut snap = Map::new();
        snap.insert("experiment".into(), Value::String(experiment.name().into()));
        snap.insert("device".into(), cfg.to_json_value());
        snap.insert("options".into(), serde_json::to_value(&opts).context("serializing options")?);
        let snapshot = Value::Object(snap);
        let hash = json_hash(&snapshot);
        Ok(Self { experiment, params, options: opts, snapshot, hash })
    }
}

/// Default options as a JSON document.
pub fn default_options() -> Value {
    serde_json::to_value(Options::default()).expect("plain data serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_hit_device_then_options() {
        let mut d = load_device(None).unwrap();
        let mut o = default_options();
        apply_override(&mut d, &mut o, "xi_p_sq=0.05").unwrap();
        apply_override(&mut d, &mut o, "n_traces=1000").unwrap();
        apply_override(&mut d, &mut o, "t_b_s=2e-6").unwrap();
        apply_override(&mut d, &mut o, "state=coherent0.6").unwrap();
        assert_eq!(d["xi_p_sq"], 0.05);
        assert_eq!(o["n_traces"], 1000);
        assert_eq!(o["t_b_s"], serde_json::json!([2e-6]));
        assert_eq!(o["state"], "coherent0.6");
        assert!(apply_override(&mut d, &mut o, "nonsense=1").is_err());
        assert!(apply_override(&mut d, &mut o, "xi_p_sq").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let d = load_device(None).unwrap();
        let a = Resolved::new(Experiment::DeriveParams, d.clone(), default_options()).unwrap();
        let b = Resolved::new(Experiment::DeriveParams, d.clone(), default_options()).unwrap();
        assert_eq!(a.hash, b.hash);
        let mut d2 = d;
        let mut o = default_options();
        apply_override(&mut d2, &mut o, "kappa_b_hz=1.1e6").unwrap();
        assert_ne!(Resolved::new(Experiment::DeriveParams, d2, o).unwrap().hash, a.hash);
    }

    #[test]
    fn numeric_keys() {
        let d = load_device(None).unwrap();
        let o = default_options();
        assert!(is_numeric_key(&d, &o, "xi_p_sq"));
        assert!(is_numeric_key(&d, &o, "t_b_s"));
        assert!(is_numeric_key(&d, &o, "delta_hz"));
        assert!(!is_numeric_key(&d, &o, "state"));
        assert!(!is_numeric_key(&d, &o, "missing"));
    }
}
