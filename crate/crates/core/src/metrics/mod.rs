//! Figure-of-merit formulas, least-squares fits and the detection-curve
//! experiments built on the reduced and full models.

mod fit;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{
    buffer_pulse, build_full_model, build_reduced_model, pump_envelope, CircuitParams, DerivedRates, ReducedOptions,
};
use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, BUFFER, QUBIT};
use crate::lindblad::{evolve, StepControl};
use crate::report::{format_float, json_hash};

pub use fit::{FitParam, FitResult};
use fit::{levenberg_marquardt, Model};

/// `p_e = 1 - exp(-eta n_bar)`.
pub fn click_probability(n_bar: f64, eta: f64) -> Result<f64> {
    if !(n_bar >= 0.0) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("need n_bar >= 0 and 0 <= eta <= 1 (got {n_bar}, {eta})")));
    }
    Ok(-(-eta * n_bar).exp_m1())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    PhotonNumber,
    PulseLength,
    Window,
}

impl Abscissa {
    fn column(self) -> &'static str {
        match self {
            Abscissa::PhotonNumber => "n_bar",
            Abscissa::PulseLength => "t_b_s",
            Abscissa::Window => "t_p_s",
        }
    }
}

/// Click probability (or efficiency) against one abscissa.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionCurve {
    pub kind: Abscissa,
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub config_hash: String,
}

impl DetectionCurve {
    pub fn new(kind: Abscissa, label: &str, points: Vec<(f64, f64)>, config_hash: &str) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument(format!("curve `{label}`: abscissa must be strictly increasing")));
        }
        if let Some((x, y)) = points.iter().find(|(_, y)| !(-1e-9..=1.0 + 1e-9).contains(y)) {
            return Err(Error::InvalidArgument(format!("curve `{label}`: p_e = {y} at x = {x} is outside [0, 1]")));
        }
        Ok(Self { kind, label: label.to_string(), points, config_hash: config_hash.to_string() })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},p_e,config_hash\n", self.kind.column());
        for (x, y) in &self.points {
            let _ = writeln!(s, "{},{},{}", format_float(*x), format_float(*y), self.config_hash);
        }
        s
    }
}

/// Provenance hash of a parameter set.
pub fn params_hash(params: &CircuitParams) -> String {
    json_hash(&serde_json::to_value(params).expect("plain data serializes"))
}

struct Saturation<'a>(&'a [(f64, f64)]);

impl Model for Saturation<'_> {
    fn names(&self) -> &[&'static str] {
        &["p0", "eta"]
    }
    fn residuals(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.0.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 2);
        for (i, (nb, y)) in self.0.iter().enumerate() {
            let e = (-x[1] * nb).exp();
            r[i] = x[0] + 1.0 - e - y;
            j[(i, 0)] = 1.0;
            j[(i, 1)] = nb * e;
        }
        (r, j)
    }
}

/// Default low-occupation window, `1 - P0 <= 0.3`.
pub const EFFICIENCY_WINDOW: f64 = 0.3;

/// Fits `p_e = p0 + 1 - P0^eta` (`P0 = exp(-n_bar)`) to the points with
/// `1 - P0 <= 0.3`; slope at the origin is `eta`, intercept `p0`.
pub fn fit_efficiency(curve: &DetectionCurve) -> Result<FitResult> {
    fit_efficiency_window(curve, EFFICIENCY_WINDOW)
}

pub fn fit_efficiency_window(curve: &DetectionCurve, max_one_minus_p0: f64) -> Result<FitResult> {
    if curve.kind != Abscissa::PhotonNumber {
        return Err(Error::InvalidArgument("efficiency fits need a photon-number abscissa".into()));
    }
    let pts: Vec<(f64, f64)> = curve.points.iter().copied().filter(|(n, _)| -(-n).exp_m1() <= max_one_minus_p0).collect();
    let distinct = {
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        xs.dedup();
        xs.len()
    };
    if pts.len() < 3 || distinct < 2 {
        return Err(Error::InvalidArgument(format!(
            "degenerate abscissa: {} points ({} distinct) inside the 1-P0 <= {max_one_minus_p0} window",
            pts.len(),
            distinct
        )));
    }
    // Linear start: slope from least squares through the window.
    let (sx, sy, sxx, sxy, n) = pts.iter().fold((0.0, 0.0, 0.0, 0.0, 0.0), |a, (x, y)| (a.0 + x, a.1 + y, a.2 + x * x, a.3 + x * y, a.4 + 1.0));
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let start = [(sy - slope * sx) / n, slope];
    levenberg_marquardt(&Saturation(&pts), "p0 + 1 - exp(-eta n_bar)", &[start[0].clamp(0.0, 1.0), start[1].clamp(0.0, 1.0)], &[0.0, 0.0], &[1.0, 1.0])
}

/// The four limits of the pulse-length study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `T1 = inf` and `kappa_b = inf`.
    Ideal,
    /// `kappa_b = inf`, measured `T1`.
    FastBuffer,
    /// `T1 = inf`, measured `kappa_b`.
    NoDecay,
    /// Measured `T1` and `kappa_b`.
    Measured,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Ideal, Regime::FastBuffer, Regime::NoDecay, Regime::Measured];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Ideal => "t1_inf_kappa_b_inf",
            Regime::FastBuffer => "kappa_b_inf",
            Regime::NoDecay => "t1_inf",
            Regime::Measured => "measured",
        }
    }

    fn finite_t1(self) -> bool {
        matches!(self, Regime::FastBuffer | Regime::Measured)
    }

    fn fast_buffer(self) -> bool {
        matches!(self, Regime::Ideal | Regime::FastBuffer)
    }
}

/// Timing and probe settings of the pulse-length study.
///
/// The pump switches on at `t = 0` with the configured tanh ramp and off at
/// `t_b + tail`; the square probe occupies `[0, t_b)`; the qubit is read at
/// `t_b + tail`. `eta` is fitted from the probe strengths `n_bars`. The
/// `kappa_b = inf` limit scales `kappa_b` and `kappa_nl` together by
/// `fast_buffer_scale`, keeping the matched-damping efficiency fixed.
#[derive(Clone, Debug, Serialize)]
pub struct PulseProtocol {
    pub tail: f64,
    pub n_bars: Vec<f64>,
    pub fast_buffer_scale: f64,
    pub n_buffer: usize,
}

impl Default for PulseProtocol {
    fn default() -> Self {
        Self { tail: 500e-9, n_bars: vec![0.05, 0.1, 0.2], fast_buffer_scale: 20.0, n_buffer: 3 }
    }
}

fn regime_params(params: &CircuitParams, regime: Regime, protocol: &PulseProtocol) -> Result<CircuitParams> {
    let mut p = params.clone();
    p.n_buffer = protocol.n_buffer;
    if !regime.finite_t1() {
        p.kappa_q = 0.0;
    }
    if regime.fast_buffer() {
        let kappa_nl = DerivedRates::compute(params)?.kappa_nl;
        p.kappa_b *= protocol.fast_buffer_scale;
        p.kappa_nl_override = Some(kappa_nl * protocol.fast_buffer_scale);
    }
    Ok(p)
}

/// Fitted efficiency for one regime and probe length.
pub fn pulse_efficiency(params: &CircuitParams, regime: Regime, t_b: f64, protocol: &PulseProtocol) -> Result<f64> {
    if !(t_b > 0.0) {
        return Ok(0.0);
    }
    let p = regime_params(params, regime, protocol)?;
    let t_end = t_b + protocol.tail;
    let opts = ReducedOptions { qubit_decay: true, ..ReducedOptions::default() }.with_pump(pump_envelope(&p, 0.0, t_end));
    let mut pts = Vec::with_capacity(protocol.n_bars.len());
    for &n in &protocol.n_bars {
        let drive = buffer_pulse(&p, n, 0.0, t_b)?;
        let g = build_reduced_model(&p, &opts, Some(&drive))?;
        let traj = evolve(&g, &DensityMatrix::vacuum(g.layout()), &[0.0, t_b, t_end], &StepControl::default())?;
        pts.push((n, traj.final_state().level_population(QUBIT, 1)?));
    }
    let curve = DetectionCurve::new(Abscissa::PhotonNumber, regime.label(), pts, "")?;
    Ok(fit_efficiency_window(&curve, 1.0)?.value("eta"))
}

/// One efficiency-vs-`t_b` curve per regime. Points run in parallel; the
/// output order follows `regimes` and `t_b`.
pub fn efficiency_vs_pulse_length(
    params: &CircuitParams,
    regimes: &[Regime],
    t_b: &[f64],
    protocol: &PulseProtocol,
) -> Result<Vec<DetectionCurve>> {
    let jobs: Vec<(Regime, f64)> = regimes.iter().flat_map(|&r| t_b.iter().map(move |&t| (r, t))).collect();
    let etas = jobs
        .par_iter()
        .map(|&(r, t)| pulse_efficiency(params, r, t, protocol))
        .collect::<Result<Vec<f64>>>()?;
    let hash = params_hash(params);
    regimes
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let pts = t_b.iter().copied().zip(etas[k * t_b.len()..(k + 1) * t_b.len()].iter().copied()).collect();
            DetectionCurve::new(Abscissa::PulseLength, r.label(), pts, &hash)
        })
        .collect()
}

struct Linear<'a>(&'a [(f64, f64)]);

impl Model for Linear<'_> {
    fn names(&self) -> &[&'static str] {
        &["p0", "gamma_dc"]
    }
    fn residuals(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.0.len();
        let r = DVector::from_iterator(n, self.0.iter().map(|(t, y)| x[0] + x[1] * t - y));
        let j = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { self.0[i].0 });
        (r, j)
    }
}

struct Relaxation<'a>(&'a [(f64, f64)]);

impl Model for Relaxation<'_> {
    fn names(&self) -> &[&'static str] {
        &["p0", "p_inf", "gamma"]
    }
    fn residuals(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.0.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 3);
        for (i, (t, y)) in self.0.iter().enumerate() {
            let e = (-x[2] * t).exp();
            r[i] = x[1] + (x[0] - x[1]) * e - y;
            j[(i, 0)] = e;
            j[(i, 1)] = 1.0 - e;
            j[(i, 2)] = -(x[0] - x[1]) * t * e;
        }
        (r, j)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DarkCountFit {
    /// `p0 + gamma_dc t_p`.
    pub linear: FitResult,
    /// `p_inf + (p0 - p_inf) exp(-gamma t_p)`, absent when it did not converge.
    pub exponential: Option<FitResult>,
    /// Set when the exponential fit failed and only the linear model applies.
    pub fell_back_to_linear: bool,
}

/// Fits the dark-count rise with the linear and the saturating model.
pub fn fit_dark_count(series: &[(f64, f64)]) -> Result<DarkCountFit> {
    if series.len() < 4 {
        return Err(Error::InvalidArgument(format!("dark-count fit needs >= 4 points, got {}", series.len())));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidArgument("dark-count windows must be strictly increasing".into()));
    }
    let inf = f64::INFINITY;
    let (t0, y0) = series[0];
    let (t1, y1) = series[series.len() - 1];
    let slope0 = ((y1 - y0) / (t1 - t0)).max(0.0);
    let linear = levenberg_marquardt(&Linear(series), "linear", &[y0, slope0], &[0.0, 0.0], &[1.0, inf])?;

    let best = relaxation_multistart(series);
    let usable = best.filter(|f| {
        f.converged && f.value("gamma") > 0.0 && f.value("gamma").is_finite() && f.residual_rms.is_finite() && f.residual_rms <= linear.residual_rms * (1.0 + 1e-9)
    });
    if usable.is_none() {
        log::warn!("exponential dark-count fit did not converge; reporting the linear model only");
    }
    Ok(DarkCountFit { fell_back_to_linear: usable.is_none(), exponential: usable, linear })
}

fn relaxation_multistart(series: &[(f64, f64)]) -> Option<FitResult> {
    let inf = f64::INFINITY;
    let (t0, y0) = series[0];
    let (t1, y1) = series[series.len() - 1];
    let span = t1 - t0;
    let mut best: Option<FitResult> = None;
    for k in [0.3, 1.0, 3.0, 10.0] {
        let start = [y0.clamp(0.0, 1.0), y1.clamp(0.0, 1.0), k / span];
        if let Ok(f) = levenberg_marquardt(&Relaxation(series), "exponential", &start, &[0.0, 0.0, 0.0], &[1.0, 1.0, inf]) {
            if best.as_ref().is_none_or(|b| f.residual_rms < b.residual_rms) {
                best = Some(f);
            }
        }
    }
    best
}

/// Fits `p_inf + (p0 - p_inf) exp(-gamma t)` to a population series.
pub fn fit_relaxation(series: &[(f64, f64)]) -> Result<FitResult> {
    if series.len() < 4 {
        return Err(Error::InvalidArgument(format!("relaxation fit needs >= 4 points, got {}", series.len())));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidArgument("relaxation times must be strictly increasing".into()));
    }
    relaxation_multistart(series).ok_or_else(|| Error::Numerical("relaxation fit failed from every start".into()))
}

/// Decay rate from a least-squares line through `ln y` over the first
/// decade of the series: the leading points with `y >= y(t0) / 10`.
pub fn decay_rate_one_decade(series: &[(f64, f64)]) -> Result<f64> {
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidArgument("decay times must be strictly increasing".into()));
    }
    let Some(&(_, y0)) = series.first() else {
        return Err(Error::InvalidArgument("empty decay series".into()));
    };
    if !(y0 > 0.0) {
        return Err(Error::InvalidArgument(format!("decay series must start positive, got {y0}")));
    }
    let pts: Vec<(f64, f64)> = series.iter().take_while(|(_, y)| *y >= y0 / 10.0).map(|(t, y)| (*t, y.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!("only {} points inside the first decade; sample more finely", pts.len())));
    }
    if pts.len() == series.len() {
        log::warn!("series never fell below a tenth of its initial value; the rate uses less than one decade");
    }
    let n = pts.len() as f64;
    let (sx, sy, sxx, sxy) = pts.iter().fold((0.0, 0.0, 0.0, 0.0), |a, (x, y)| (a.0 + x, a.1 + y, a.2 + x * x, a.3 + x * y));
    Ok(-(n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Overall efficiency when the detector is armed for `t_p` of every `t_cycle`.
pub fn duty_cycle_efficiency(eta: f64, t_p: f64, t_cycle: f64) -> Result<f64> {
    if !(t_cycle > 0.0) || !(t_p >= 0.0 && t_p <= t_cycle) {
        return Err(Error::InvalidArgument(format!("need 0 <= t_p <= t_cycle, t_cycle > 0 (got {t_p}, {t_cycle})")));
    }
    Ok(eta * t_p / t_cycle)
}

#[derive(Clone, Debug, Serialize)]
pub struct FockCoherentReport {
    pub epsilon: f64,
    /// Click probability for `(1-eps)|0><0| + eps|1><1|`.
    pub p_fock: f64,
    /// Click probability for the phase-averaged coherent state `|alpha|^2 = eps`.
    pub p_coherent: f64,
    pub difference: f64,
}

/// Evolves both buffer inputs under the undriven full model for `window`
/// seconds and compares the final qubit excitation.
pub fn fock_coherent_equivalence(params: &CircuitParams, epsilon: f64, window: f64) -> Result<FockCoherentReport> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must lie in [0, 1]")));
    }
    let g = build_full_model(params, None, None)?;
    let layout = g.layout().clone();
    let nb = params.n_buffer;
    let mut fock = vec![0.0; nb];
    fock[0] = 1.0 - epsilon;
    fock[1] = epsilon;
    let mut poisson: Vec<f64> = (0..nb)
        .scan(1.0, |term, n| {
            let v = *term;
            *term *= epsilon / (n + 1) as f64;
            Some(v)
        })
        .map(|x| x * (-epsilon).exp())
        .collect();
    let total: f64 = poisson.iter().sum();
    poisson.iter_mut().for_each(|x| *x /= total);
    let click = |pops: &[f64]| -> Result<f64> {
        let rho = DensityMatrix::diagonal(&layout, BUFFER, pops)?;
        let traj = evolve(&g, &rho, &[0.0, window], &StepControl::default())?;
        traj.final_state().level_population(QUBIT, 1)
    };
    let p_fock = click(&fock)?;
    let p_coherent = click(&poisson)?;
    Ok(FockCoherentReport { epsilon, p_fock, p_coherent, difference: (p_fock - p_coherent).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn curve(eta: f64, p0: f64) -> DetectionCurve {
        let pts = (1..=12).map(|i| {
            let n = 0.03 * i as f64;
            (n, p0 + click_probability(n, eta).unwrap())
        });
        DetectionCurve::new(Abscissa::PhotonNumber, "syn", pts.collect(), "x").unwrap()
    }

    #[test]
    fn click_probability_examples() {
        assert_eq!(click_probability(0.0, 0.7).unwrap(), 0.0);
        for n in [0.001, 0.01, 0.05] {
            assert!((click_probability(n, 0.3).unwrap() / n / 0.3 - 1.0).abs() < 0.01);
        }
        assert!((click_probability(1.0, 0.58).unwrap() - 0.440).abs() < 5e-4);
        assert!(click_probability(-1.0, 0.5).is_err());
    }

    #[test]
    fn efficiency_fit_round_trip() {
        let f = fit_efficiency(&curve(0.5, 0.0)).unwrap();
        assert!((f.value("eta") - 0.5).abs() < 1e-6);
        assert!(f.value("p0").abs() < 1e-6);
        let g = fit_efficiency(&curve(0.5, 0.003)).unwrap();
        assert!((g.value("p0") - 0.003).abs() < 1e-4);
    }

    #[test]
    fn efficiency_fit_degenerate() {
        let c = DetectionCurve::new(Abscissa::PhotonNumber, "d", vec![(0.1, 0.05), (2.0, 0.6)], "").unwrap();
        assert!(fit_efficiency(&c).is_err());
    }

    #[test]
    fn curve_invariants() {
        assert!(DetectionCurve::new(Abscissa::Window, "x", vec![(1.0, 0.1), (0.5, 0.1)], "").is_err());
        assert!(DetectionCurve::new(Abscissa::Window, "x", vec![(1.0, 1.5)], "").is_err());
    }

    #[test]
    fn dark_count_examples() {
        let lin: Vec<_> = (0..8).map(|i| {
            let t = i as f64 * 1e-6;
            (t, 0.003 + 1.4e3 * t)
        }).collect();
        let f = fit_dark_count(&lin).unwrap();
        assert_relative_eq!(f.linear.value("p0"), 0.003, max_relative = 0.01);
        assert_relative_eq!(f.linear.value("gamma_dc"), 1.4e3, max_relative = 0.01);

        let flat: Vec<_> = (0..6).map(|i| (i as f64 * 1e-6, 0.01)).collect();
        let f = fit_dark_count(&flat).unwrap();
        assert!(f.linear.value("gamma_dc").abs() < 1e-9);

        let g = 1.0 / 7.7e-6;
        let exp: Vec<_> = (0..15).map(|i| {
            let t = i as f64 * 2e-6;
            (t, 0.015 + (0.003 - 0.015) * (-g * t).exp())
        }).collect();
        let f = fit_dark_count(&exp).unwrap();
        let e = f.exponential.unwrap();
        assert_relative_eq!(e.value("p0"), 0.003, max_relative = 0.02);
        assert_relative_eq!(e.value("p_inf"), 0.015, max_relative = 0.02);
        assert_relative_eq!(e.value("gamma"), g, max_relative = 0.02);
        assert!(fit_dark_count(&exp[..3]).is_err());
    }

    #[test]
    fn one_decade_rate() {
        let s: Vec<_> = (0..40).map(|i| {
            let t = i as f64 * 1e-7;
            (t, 0.9 * (-2.5e6 * t).exp() + if t > 1.2e-6 { 0.5 } else { 0.0 })
        }).collect();
        assert_relative_eq!(decay_rate_one_decade(&s).unwrap(), 2.5e6, max_relative = 1e-12);
        assert!(decay_rate_one_decade(&s[..2]).is_err());
        assert!(decay_rate_one_decade(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]).is_err());
    }

    #[test]
    fn duty_cycle_examples() {
        assert_eq!(duty_cycle_efficiency(0.5, 2.0, 2.0).unwrap(), 0.5);
        assert!((duty_cycle_efficiency(0.47, 3e-6, 7e-6).unwrap() - 0.20).abs() < 0.005);
        assert_eq!(duty_cycle_efficiency(0.5, 0.0, 2.0).unwrap(), 0.0);
        assert!(duty_cycle_efficiency(0.5, 3.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn click_monotone_concave(n in 0.0f64..5.0, eta in 0.01f64..0.99, dn in 0.01f64..1.0) {
            let a = click_probability(n, eta).unwrap();
            let b = click_probability(n + dn, eta).unwrap();
            let c = click_probability(n + 2.0 * dn, eta).unwrap();
            prop_assert!(b > a);
            prop_assert!(c - b <= b - a + 1e-15);
            prop_assert!(click_probability(n + dn, (eta + 0.01).min(1.0)).unwrap() >= b);
        }

        #[test]
        fn efficiency_fit_exact(eta in 0.05f64..1.0, p0 in 0.0f64..0.05) {
            let f = fit_efficiency(&curve(eta, p0)).unwrap();
            prop_assert!((f.value("eta") - eta).abs() < 1e-7);
            prop_assert!((f.value("p0") - p0).abs() < 1e-7);
        }
    }
}
