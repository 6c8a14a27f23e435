use std::f64::consts::TAU;

use serde::Serialize;

use super::params::CircuitParams;
use crate::error::{Error, Result};
use crate::hilbert::C64;

/// All six Kerr and cross-Kerr rates (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiSet {
    pub chi_qq: f64,
    pub chi_bb: f64,
    pub chi_ww: f64,
    pub chi_qb: f64,
    pub chi_qw: f64,
    pub chi_bw: f64,
}

/// Kerr coefficients from the Josephson energy and zero-point phases:
/// `chi_mm = E_J phi_m^4 / 2`, `chi_mn = E_J phi_m^2 phi_n^2`.
pub fn chi_from_circuit(e_j: f64, phi_q: f64, phi_b: f64, phi_w: f64) -> Result<ChiSet> {
    if !(e_j > 0.0) || !e_j.is_finite() {
        return Err(Error::InvalidArgument(format!("E_J = {e_j} must be > 0")));
    }
    for (name, phi) in [("phi_q", phi_q), ("phi_b", phi_b), ("phi_w", phi_w)] {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} = {phi} must lie in (0, 1) rad")));
        }
    }
    let (q2, b2, w2) = (phi_q * phi_q, phi_b * phi_b, phi_w * phi_w);
    Ok(ChiSet {
        chi_qq: e_j * q2 * q2 / 2.0,
        chi_bb: e_j * b2 * b2 / 2.0,
        chi_ww: e_j * w2 * w2 / 2.0,
        chi_qb: e_j * q2 * b2,
        chi_qw: e_j * q2 * w2,
        chi_bw: e_j * b2 * w2,
    })
}

/// `g3 = -xi_p sqrt(chi_qb chi_qw)`.
pub fn three_wave_rate(xi_p: C64, chi_qb: f64, chi_qw: f64) -> Result<C64> {
    if !(chi_qb > 0.0 && chi_qw > 0.0) {
        return Err(Error::InvalidArgument(format!("chi_qb = {chi_qb} and chi_qw = {chi_qw} must be > 0")));
    }
    Ok(-xi_p * (chi_qb * chi_qw).sqrt())
}

/// Adiabatically eliminated waste: returns `(kappa_nl, Delta_nl)`.
pub fn nonlinear_rate(g3: C64, kappa_w: f64, delta: f64, chi_qw: f64) -> Result<(f64, f64)> {
    if !(kappa_w > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa_w = {kappa_w} must be > 0")));
    }
    let x = (delta - chi_qw) / kappa_w;
    let kappa_nl = 4.0 * g3.norm_sqr() / kappa_w / (1.0 + 4.0 * x * x);
    Ok((kappa_nl, -kappa_nl * x))
}

/// `eta = 4 kappa_nl kappa_b / (kappa_nl + kappa_b)^2`.
pub fn efficiency(kappa_nl: f64, kappa_b: f64) -> Result<f64> {
    if !(kappa_nl > 0.0 && kappa_b > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa_nl = {kappa_nl}, kappa_b = {kappa_b} must both be > 0")));
    }
    let s = kappa_nl + kappa_b;
    Ok((4.0 * kappa_nl * kappa_b / (s * s)).min(1.0))
}

/// Pump frequency for three-wave resonance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PumpFrequency {
    pub omega_p: f64,
    /// Zero-power intercept in Hz.
    pub f_p0_hz: f64,
    /// `d omega_p / d|xi_p|^2` in rad/s.
    pub slope: f64,
}

pub fn pump_frequency(p: &CircuitParams) -> Result<PumpFrequency> {
    let base = p.bare_omega_q() + p.bare_omega_w() - p.bare_omega_b() - p.delta;
    if !base.is_finite() {
        return Err(Error::InvalidArgument("mode frequencies missing or non-finite".into()));
    }
    let slope = -(2.0 * p.chi_qq + p.chi_qw - p.chi_qb);
    Ok(PumpFrequency { omega_p: base + slope * p.xi_p.norm_sqr(), f_p0_hz: base / TAU, slope })
}

/// Waste decay through a Purcell filter and the residual qubit decay through
/// the waste, both with full Lorentzian detuning factors.
pub fn purcell_rates(coupling: f64, kappa_p: f64, omega_p: f64, omega_w: f64, g_qw: f64, omega_q: f64) -> Result<(f64, f64)> {
    if !(kappa_p > 0.0) {
        return Err(Error::InvalidArgument(format!("Purcell linewidth {kappa_p} must be > 0")));
    }
    let lorentz = |d: f64| 1.0 / (1.0 + (2.0 * d / kappa_p).powi(2));
    let base = 4.0 * coupling * coupling / kappa_p;
    let kappa_w = base * lorentz(omega_p - omega_w);
    let dq = omega_w - omega_q;
    let kappa_q = g_qw * g_qw / (dq * dq) * base * lorentz(omega_p - omega_q);
    Ok((kappa_w, kappa_q))
}

/// Predicted pump frequency of the sixth-order spurious line,
/// `(omega_bar_q + omega_q^ef + omega_b) / 3` with `omega_q^ef = omega_bar_q - chi_qq`.
pub fn spurious_pump_frequency(p: &CircuitParams) -> f64 {
    let wq = p.bare_omega_q() - 2.0 * p.chi_qq * p.xi_p.norm_sqr();
    (wq + (wq - p.chi_qq) + p.bare_omega_b()) / 3.0
}

/// `kappa_reset = 4 eps_w^2 / (kappa_b + kappa_nl)^2 * kappa_nl kappa_b / kappa_w`.
pub fn reset_rate(epsilon_w: f64, kappa_nl: f64, kappa_b: f64, kappa_w: f64) -> f64 {
    let s = kappa_b + kappa_nl;
    4.0 * epsilon_w * epsilon_w / (s * s) * kappa_nl * kappa_b / kappa_w
}

/// Inverse of [`reset_rate`] in `epsilon_w`.
pub fn epsilon_w_for_reset(kappa_reset: f64, kappa_nl: f64, kappa_b: f64, kappa_w: f64) -> Result<f64> {
    if !(kappa_nl > 0.0 && kappa_b > 0.0 && kappa_reset >= 0.0) {
        return Err(Error::InvalidArgument("reset inversion needs kappa_nl, kappa_b > 0".into()));
    }
    Ok(0.5 * (kappa_b + kappa_nl) * (kappa_reset * kappa_w / (kappa_nl * kappa_b)).sqrt())
}

/// Every closed-form quantity derived from a [`CircuitParams`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedRates {
    /// Effective three-wave rate used by the models (rescaled when a fitted
    /// `kappa_nl` is supplied).
    pub g3: C64,
    /// `g3` straight from the pump amplitude and cross-Kerrs.
    pub g3_closed_form: C64,
    pub kappa_nl: f64,
    pub kappa_nl_closed_form: f64,
    pub delta_nl: f64,
    pub eta: f64,
    pub omega_p: f64,
    pub f_p0_hz: f64,
    pub pump_slope: f64,
    pub spurious_omega_p: f64,
    pub epsilon_w: Option<f64>,
    pub kappa_reset: Option<f64>,
    /// `|g3| / kappa_w`, the adiabatic-elimination small parameter.
    pub elimination_ratio: f64,
    pub purcell_kappa_w: Option<f64>,
    pub purcell_kappa_q: Option<f64>,
}

impl DerivedRates {
    pub fn compute(p: &CircuitParams) -> Result<Self> {
        let g3_closed = three_wave_rate(p.xi_p, p.chi_qb, p.chi_qw)?;
        let (kappa_nl_closed, _) = nonlinear_rate(g3_closed, p.kappa_w, p.delta, p.chi_qw)?;
        let g3 = match p.kappa_nl_override {
            Some(k) if kappa_nl_closed > 0.0 => g3_closed * (k / kappa_nl_closed).sqrt(),
            Some(k) if k > 0.0 => {
                return Err(Error::Config("a kappa_nl override needs a nonzero pump amplitude".into()));
            }
            _ => g3_closed,
        };
        let (kappa_nl, delta_nl) = nonlinear_rate(g3, p.kappa_w, p.delta, p.chi_qw)?;
        let eta = if kappa_nl > 0.0 { efficiency(kappa_nl, p.kappa_b)? } else { 0.0 };
        let pump = pump_frequency(p)?;
        let (epsilon_w, kappa_reset) = match (p.epsilon_w, p.reset_time) {
            (Some(e), _) => (Some(e), Some(reset_rate(e, kappa_nl, p.kappa_b, p.kappa_w))),
            (None, Some(t)) if kappa_nl > 0.0 => {
                let e = epsilon_w_for_reset(1.0 / t, kappa_nl, p.kappa_b, p.kappa_w)?;
                (Some(e), Some(reset_rate(e, kappa_nl, p.kappa_b, p.kappa_w)))
            }
            _ => (None, None),
        };
        let (purcell_kappa_w, purcell_kappa_q) = match &p.purcell {
            Some(f) => {
                let (kw, kq) = purcell_rates(f.coupling, f.kappa, f.omega, p.bare_omega_w(), f.qubit_waste_coupling, p.bare_omega_q())?;
                (Some(kw), Some(kq))
            }
            None => (None, None),
        };
        Ok(Self {
            g3,
            g3_closed_form: g3_closed,
            kappa_nl,
            kappa_nl_closed_form: kappa_nl_closed,
            delta_nl,
            eta,
            omega_p: pump.omega_p,
            f_p0_hz: pump.f_p0_hz,
            pump_slope: pump.slope,
            spurious_omega_p: spurious_pump_frequency(p),
            epsilon_w,
            kappa_reset,
            elimination_ratio: g3.norm() / p.kappa_w,
            purcell_kappa_w,
            purcell_kappa_q,
        })
    }
}
