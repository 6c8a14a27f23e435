use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::C64;

/// The bundled device description (frequencies in Hz).
pub const BUNDLED_DEVICE_JSON: &str = include_str!("../../data/paper_device.json");

/// Flat on-disk device description. Frequencies and rates in Hz (cycles/s),
/// times in seconds; `null` means "derive" or "absent" as documented per key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    /// Dressed qubit frequency with the pump off.
    pub omega_q_hz: f64,
    /// Buffer frequency with the qubit in |g>.
    pub omega_b_g_hz: f64,
    /// Waste frequency with the qubit in |e>.
    pub omega_w_e_hz: f64,
    pub chi_qq_hz: f64,
    pub chi_qb_hz: f64,
    pub chi_qw_hz: f64,
    #[serde(default)]
    pub chi_bb_hz: Option<f64>,
    #[serde(default)]
    pub chi_ww_hz: Option<f64>,
    #[serde(default)]
    pub chi_bw_hz: Option<f64>,
    pub kappa_b_hz: f64,
    pub kappa_w_hz: f64,
    /// `null` disables qubit decay.
    #[serde(default)]
    pub t1_s: Option<f64>,
    /// `null` disables pure dephasing.
    #[serde(default)]
    pub t2_star_s: Option<f64>,
    pub xi_p_sq: f64,
    #[serde(default)]
    pub xi_p_phase_rad: f64,
    /// Waste-frame detuning; `null` selects the optimum `chi_qw`.
    #[serde(default)]
    pub delta_hz: Option<f64>,
    #[serde(default)]
    pub e_j_hz: Option<f64>,
    #[serde(default)]
    pub phi_q: Option<f64>,
    #[serde(default)]
    pub phi_b: Option<f64>,
    #[serde(default)]
    pub phi_w: Option<f64>,
    /// Fitted nonlinear damping; overrides the closed form by rescaling `|g3|`.
    #[serde(default)]
    pub kappa_nl_hz: Option<f64>,
    pub n_buffer: usize,
    pub n_waste: usize,
    #[serde(default = "default_ramp")]
    pub pump_ramp_s: f64,
    /// Reset drive amplitude; `null` inverts it from `reset_time_s`.
    #[serde(default)]
    pub epsilon_w_hz: Option<f64>,
    #[serde(default)]
    pub reset_time_s: Option<f64>,
    /// Thermal excitation rate of the qubit (1/s, not angular).
    #[serde(default)]
    pub gamma_up_per_s: f64,
    #[serde(default)]
    pub p_excited_initial: f64,
    #[serde(default)]
    pub purcell_coupling_hz: Option<f64>,
    #[serde(default)]
    pub purcell_kappa_hz: Option<f64>,
    #[serde(default)]
    pub purcell_omega_hz: Option<f64>,
    #[serde(default)]
    pub qubit_waste_coupling_hz: Option<f64>,
}

fn default_ramp() -> f64 {
    100e-9
}

impl DeviceConfig {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_DEVICE_JSON).expect("bundled device file is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serializes")
    }
}

/// Microscopic circuit parameters (angular units for `e_j`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Microscopic {
    pub e_j: f64,
    pub phi_q: f64,
    pub phi_b: f64,
    pub phi_w: f64,
}

/// Purcell-filter parameters (angular units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PurcellParams {
    pub coupling: f64,
    pub kappa: f64,
    pub omega: f64,
    pub qubit_waste_coupling: f64,
}

/// Device parameters in rad/s (rates in 1/s, times in s).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircuitParams {
    pub omega_q: f64,
    pub omega_b_g: f64,
    pub omega_w_e: f64,
    pub chi_qq: f64,
    pub chi_qb: f64,
    pub chi_qw: f64,
    pub chi_bw: f64,
    pub chi_bb: f64,
    pub chi_ww: f64,
    pub kappa_b: f64,
    pub kappa_w: f64,
    pub kappa_q: f64,
    pub kappa_phi: f64,
    pub gamma_up: f64,
    pub xi_p: C64,
    pub delta: f64,
    pub microscopic: Option<Microscopic>,
    pub kappa_nl_override: Option<f64>,
    pub n_buffer: usize,
    pub n_waste: usize,
    pub pump_ramp: f64,
    pub epsilon_w: Option<f64>,
    pub reset_time: Option<f64>,
    pub p_excited_initial: f64,
    pub purcell: Option<PurcellParams>,
}

impl CircuitParams {
    pub fn bundled() -> Self {
        Self::from_config(&DeviceConfig::bundled()).expect("bundled device file is consistent")
    }

    pub fn from_config(c: &DeviceConfig) -> Result<Self> {
        let w = |hz: f64| TAU * hz;
        let (chi_qq, chi_qb, chi_qw) = (w(c.chi_qq_hz), w(c.chi_qb_hz), w(c.chi_qw_hz));
        let microscopic = match (c.e_j_hz, c.phi_q, c.phi_b, c.phi_w) {
            (None, None, None, None) => None,
            (Some(e), Some(q), Some(b), Some(ww)) => Some(Microscopic { e_j: w(e), phi_q: q, phi_b: b, phi_w: ww }),
            _ => return Err(Error::Config("e_j_hz, phi_q, phi_b, phi_w must be given together".into())),
        };
        let from_circuit = microscopic.map(|m| super::chi_from_circuit(m.e_j, m.phi_q, m.phi_b, m.phi_w)).transpose()?;
        let derived = |stored: Option<f64>, micro: Option<f64>, identity: f64| match (stored, micro) {
            (Some(hz), _) => w(hz),
            (None, Some(v)) => v,
            (None, None) => identity,
        };
        let chi_bb = derived(c.chi_bb_hz, from_circuit.map(|x| x.chi_bb), chi_qb * chi_qb / (4.0 * chi_qq));
        let chi_ww = derived(c.chi_ww_hz, from_circuit.map(|x| x.chi_ww), chi_qw * chi_qw / (4.0 * chi_qq));
        let chi_bw = derived(c.chi_bw_hz, from_circuit.map(|x| x.chi_bw), chi_qb * chi_qw / (2.0 * chi_qq));

        let kappa_q = match c.t1_s {
            Some(t1) if t1 > 0.0 => 1.0 / t1,
            Some(t1) => return Err(Error::Config(format!("t1_s = {t1} must be > 0"))),
            None => 0.0,
        };
        let kappa_phi = match c.t2_star_s {
            Some(t2) if t2 > 0.0 => {
                let k = 1.0 / t2 - 0.5 * kappa_q;
                if k < 0.0 {
                    return Err(Error::Config(format!("t2_star_s = {t2} exceeds 2*T1")));
                }
                k
            }
            Some(t2) => return Err(Error::Config(format!("t2_star_s = {t2} must be > 0"))),
            None => 0.0,
        };
        let purcell = match (c.purcell_coupling_hz, c.purcell_kappa_hz, c.purcell_omega_hz, c.qubit_waste_coupling_hz) {
            (Some(g), Some(k), Some(o), Some(gq)) => {
                Some(PurcellParams { coupling: w(g), kappa: w(k), omega: w(o), qubit_waste_coupling: w(gq) })
            }
            (None, None, None, None) => None,
            _ => return Err(Error::Config("the four purcell keys must be given together".into())),
        };
        let p = Self {
            omega_q: w(c.omega_q_hz),
            omega_b_g: w(c.omega_b_g_hz),
            omega_w_e: w(c.omega_w_e_hz),
            chi_qq,
            chi_qb,
            chi_qw,
            chi_bw,
            chi_bb,
            chi_ww,
            kappa_b: w(c.kappa_b_hz),
            kappa_w: w(c.kappa_w_hz),
            kappa_q,
            kappa_phi,
            gamma_up: c.gamma_up_per_s,
            xi_p: C64::from_polar(c.xi_p_sq.max(0.0).sqrt(), c.xi_p_phase_rad),
            delta: c.delta_hz.map_or(chi_qw, w),
            microscopic,
            kappa_nl_override: c.kappa_nl_hz.map(w),
            n_buffer: c.n_buffer,
            n_waste: c.n_waste,
            pump_ramp: c.pump_ramp_s,
            epsilon_w: c.epsilon_w_hz.map(w),
            reset_time: c.reset_time_s,
            p_excited_initial: c.p_excited_initial,
            purcell,
        };
        if c.xi_p_sq < 0.0 {
            return Err(Error::Config(format!("xi_p_sq = {} must be >= 0", c.xi_p_sq)));
        }
        p.validate()?;
        Ok(p)
    }

    /// Checks the invariants: non-negative rates, `|xi_p|^2 < 1`, truncation
    /// dims >= 2, microscopic consistency within 1%.
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("chi_qq", self.chi_qq),
            ("chi_qb", self.chi_qb),
            ("chi_qw", self.chi_qw),
            ("chi_bw", self.chi_bw),
            ("chi_bb", self.chi_bb),
            ("chi_ww", self.chi_ww),
            ("kappa_b", self.kappa_b),
            ("kappa_w", self.kappa_w),
            ("kappa_q", self.kappa_q),
            ("kappa_phi", self.kappa_phi),
            ("gamma_up", self.gamma_up),
            ("pump_ramp", self.pump_ramp),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        for (name, v) in [("omega_q", self.omega_q), ("omega_b_g", self.omega_b_g), ("omega_w_e", self.omega_w_e), ("delta", self.delta)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.kappa_w > 0.0) {
            return Err(Error::Config("kappa_w must be > 0".into()));
        }
        if !(self.xi_p.norm_sqr() < 1.0) {
            return Err(Error::Config(format!("|xi_p|^2 = {} must be < 1", self.xi_p.norm_sqr())));
        }
        if self.n_buffer < 2 || self.n_waste < 2 {
            return Err(Error::Config("n_buffer and n_waste must be >= 2".into()));
        }
        if let Some(k) = self.kappa_nl_override {
            if !(k >= 0.0) || !k.is_finite() {
                return Err(Error::Config(format!("kappa_nl override {k} must be >= 0")));
            }
        }
        if let Some(e) = self.epsilon_w {
            if !(e >= 0.0) {
                return Err(Error::Config(format!("epsilon_w = {e} must be >= 0")));
            }
        }
        if let Some(t) = self.reset_time {
            if !(t > 0.0) {
                return Err(Error::Config(format!("reset_time_s = {t} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_excited_initial) {
            return Err(Error::Config("p_excited_initial must lie in [0, 1]".into()));
        }
        if let Some(m) = &self.microscopic {
            let implied = super::chi_from_circuit(m.e_j, m.phi_q, m.phi_b, m.phi_w)?;
            let pairs = [
                ("chi_qq", implied.chi_qq, self.chi_qq),
                ("chi_qb", implied.chi_qb, self.chi_qb),
                ("chi_qw", implied.chi_qw, self.chi_qw),
                ("chi_bb", implied.chi_bb, self.chi_bb),
                ("chi_ww", implied.chi_ww, self.chi_ww),
                ("chi_bw", implied.chi_bw, self.chi_bw),
            ];
            for (name, a, b) in pairs {
                if (a - b).abs() > 0.01 * b.abs() {
                    return Err(Error::Config(format!(
                        "{name}: microscopic parameters imply {:.6e} Hz but {:.6e} Hz is stored",
                        a / TAU,
                        b / TAU
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bare qubit frequency, from `omega_bar_q = omega_q - 2 chi_qq |xi|^2`
    /// with the dressed value quoted at zero pump.
    pub fn bare_omega_q(&self) -> f64 {
        self.omega_q
    }

    /// Bare waste frequency, `omega_w^e + chi_qw`.
    pub fn bare_omega_w(&self) -> f64 {
        self.omega_w_e + self.chi_qw
    }

    /// Bare buffer frequency, `omega_b^g`.
    pub fn bare_omega_b(&self) -> f64 {
        self.omega_b_g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_loads() {
        let p = CircuitParams::bundled();
        assert!((p.kappa_b / TAU - 1.0e6).abs() < 1e-6);
        assert_eq!(p.delta, p.chi_qw);
        assert!((p.xi_p.norm_sqr() - 0.076).abs() < 1e-15);
        assert!((p.kappa_q - 1.0 / 7.7e-6).abs() < 1e-6);
        assert!(p.kappa_phi > 0.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v = DeviceConfig::bundled().to_json_value();
        v["not_a_key"] = serde_json::json!(1.0);
        assert!(matches!(DeviceConfig::from_json_value(v), Err(Error::Config(_))));
    }

    #[test]
    fn strong_pump_rejected() {
        let mut c = DeviceConfig::bundled();
        c.xi_p_sq = 1.2;
        assert!(CircuitParams::from_config(&c).is_err());
    }

    #[test]
    fn negative_rate_rejected() {
        let mut c = DeviceConfig::bundled();
        c.kappa_b_hz = -1.0;
        assert!(CircuitParams::from_config(&c).is_err());
    }

    #[test]
    fn microscopic_mismatch_rejected() {
        let mut c = DeviceConfig::bundled();
        c.e_j_hz = Some(20e9);
        c.phi_q = Some(0.3);
        c.phi_b = Some(0.05);
        c.phi_w = Some(0.06);
        assert!(CircuitParams::from_config(&c).is_err());
    }

    #[test]
    fn microscopic_consistent_accepted() {
        let (e_j, pq, pb, pw) = (20e9_f64, 0.3_f64, 0.05_f64, 0.06_f64);
        let mut c = DeviceConfig::bundled();
        c.chi_qq_hz = e_j * pq.powi(4) / 2.0;
        c.chi_qb_hz = e_j * pq * pq * pb * pb;
        c.chi_qw_hz = e_j * pq * pq * pw * pw;
        c.e_j_hz = Some(e_j);
        c.phi_q = Some(pq);
        c.phi_b = Some(pb);
        c.phi_w = Some(pw);
        let p = CircuitParams::from_config(&c).unwrap();
        assert!((p.chi_bw / TAU - e_j * pb * pb * pw * pw).abs() < 1e-6 * p.chi_bw);
    }
}
