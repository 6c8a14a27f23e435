use std::fmt::Write as _;

use serde::Serialize;

use super::generator::LindbladGenerator;
use super::sparse::{anti_hermitian_part, SparseOp};
use crate::error::{Error, Result};
use crate::hilbert::{expectation, matrix_to_pairs, CMatrix, DensityMatrix, ModeLayout, Operator, C64, ZERO};
use crate::report::format_float;

/// `D[L]ρ = LρL† − ½L†Lρ − ½ρL†L`.
pub fn dissipator_apply(l: &Operator, rho: &DensityMatrix) -> Result<CMatrix> {
    if l.layout() != rho.layout() {
        return Err(Error::LayoutMismatch(format!(
            "collapse operator on {} applied to state on {}",
            l.layout().describe(),
            rho.layout().describe()
        )));
    }
    let lm = l.matrix();
    let r = rho.matrix();
    let ldl = lm.adjoint() * lm;
    let half = C64::new(0.5, 0.0);
    Ok(lm * r * lm.adjoint() - (&ldl * r) * half - (r * &ldl) * half)
}

/// Dense reference right-hand side `−i[H(t), ρ] + Σ κ_k(t) D[L_k]ρ`.
pub fn rhs(generator: &LindbladGenerator, t: f64, rho: &DensityMatrix) -> Result<CMatrix> {
    if generator.layout() != rho.layout() {
        return Err(Error::LayoutMismatch(format!(
            "generator on {} applied to state on {}",
            generator.layout().describe(),
            rho.layout().describe()
        )));
    }
    let h = generator.hamiltonian_at(t);
    let r = rho.matrix();
    let mut out = (h.matrix() * r - r * h.matrix()) * C64::new(0.0, -1.0);
    for c in generator.collapses() {
        let rate = c.rate_at(t);
        if rate != 0.0 {
            out += dissipator_apply(&c.op, rho)? * C64::new(rate, 0.0);
        }
    }
    Ok(out)
}

/// Sparse, preassembled form of a generator.
///
/// With `Y = H_eff(t) ρ` and `H_eff = H − (i/2) Σ κ L†L`, the right-hand side
/// is `−i(Y − Y†) + Σ κ LρL†`, which is exactly Hermitian for Hermitian ρ.
struct Compiled<'g> {
    generator: &'g LindbladGenerator,
    dim: usize,
    h_eff: SparseOp,
    drives: Vec<(SparseOp, SparseOp)>,
    static_jumps: Vec<(f64, SparseOp)>,
    modulated: Vec<(SparseOp, SparseOp)>,
}

impl<'g> Compiled<'g> {
    fn new(generator: &'g LindbladGenerator) -> Self {
        let dim = generator.layout().dim();
        let mut h_eff = generator.hamiltonian().matrix().clone();
        let mut static_jumps = Vec::new();
        let mut modulated = Vec::new();
        for c in generator.collapses() {
            let l = c.op.matrix();
            let ldl = l.adjoint() * l;
            match &c.modulation {
                None => {
                    if c.rate != 0.0 {
                        h_eff -= ldl * C64::new(0.0, 0.5 * c.rate);
                        static_jumps.push((c.rate, SparseOp::from_dense(l)));
                    }
                }
                Some(_) => modulated.push((SparseOp::from_dense(l), SparseOp::from_dense(&ldl))),
            }
        }
        let drives = generator
            .drives()
            .iter()
            .map(|d| {
                let a = d.coupling.matrix();
                (SparseOp::from_dense(a), SparseOp::from_dense(&a.adjoint()))
            })
            .collect();
        Self { generator, dim, h_eff: SparseOp::from_dense(&h_eff), drives, static_jumps, modulated }
    }

    /// Right-hand side at `t` inside the breakpoint-free piece `[lo, hi]`.
    fn eval(&self, t: f64, (lo, hi): (f64, f64), rho: &[C64], out: &mut [C64], y: &mut [C64], z: &mut [C64]) {
        y.fill(ZERO);
        self.h_eff.mul_acc(C64::new(1.0, 0.0), rho, y);
        for ((a, a_dag), d) in self.drives.iter().zip(self.generator.drives()) {
            let e = d.envelope.eval_within(t, lo, hi);
            if e != ZERO {
                a.mul_acc(e, rho, y);
                a_dag.mul_acc(e.conj(), rho, y);
            }
        }
        let modulated_rates: Vec<f64> = self
            .generator
            .collapses()
            .iter()
            .filter(|c| c.modulation.is_some())
            .map(|c| c.rate_within(t, lo, hi))
            .collect();
        for ((_, ldl), &rate) in self.modulated.iter().zip(&modulated_rates) {
            if rate != 0.0 {
                ldl.mul_acc(C64::new(0.0, -0.5 * rate), rho, y);
            }
        }
        anti_hermitian_part(y, out, self.dim);
        let jumps = self
            .static_jumps
            .iter()
            .map(|(r, l)| (*r, l))
            .chain(self.modulated.iter().zip(&modulated_rates).map(|((l, _), r)| (*r, l)));
        for (rate, l) in jumps {
            if rate == 0.0 {
                continue;
            }
            z.fill(ZERO);
            l.mul_acc(C64::new(1.0, 0.0), rho, z);
            l.mul_adjoint_right_acc(C64::new(rate, 0.0), z, out);
        }
    }
}

/// Step-size policy for [`evolve`].
#[derive(Clone, Debug)]
pub struct StepControl {
    /// Initial RK4 step in seconds; `None` uses `1/(50 · frequency scale)`.
    pub step: Option<f64>,
    /// Max final-state entry change tolerated when the step is halved;
    /// `None` disables the refinement loop.
    pub convergence_tol: Option<f64>,
    pub max_halvings: u32,
    /// Abort when `|Tr ρ − 1|` exceeds this at any output time.
    pub trace_tol: f64,
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { step: None, convergence_tol: Some(1e-7), max_halvings: 8, trace_tol: 1e-5, min_step: 1e-16 }
    }
}

impl StepControl {
    pub fn fixed(step: f64) -> Self {
        Self { step: Some(step), convergence_tol: None, ..Self::default() }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn with_tolerance(mut self, tol: Option<f64>) -> Self {
        self.convergence_tol = tol;
        self
    }
}

/// Time series of states with named expectation values.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// `(name, Re⟨O⟩(t))`, in insertion order.
    pub observables: Vec<(String, Vec<f64>)>,
    /// RK4 step actually used (after refinement), seconds.
    pub step: f64,
    /// Largest top-Fock-level population seen per mode.
    pub truncation: Vec<(String, f64)>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Record `Re Tr(ρ(t) O)` under `name`.
    pub fn observe(&mut self, name: &str, op: &Operator) -> Result<&[f64]> {
        let series = self
            .states
            .iter()
            .map(|s| expectation(s, op).map(|z| z.re))
            .collect::<Result<Vec<f64>>>()?;
        self.observables.retain(|(n, _)| n != name);
        self.observables.push((name.to_string(), series));
        Ok(&self.observables.last().unwrap().1)
    }

    pub fn observable(&self, name: &str) -> Option<&[f64]> {
        self.observables.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// CSV with `time_s` followed by one column per observable.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s");
        for (name, _) in &self.observables {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            s.push_str(&format_float(*t));
            for (_, v) in &self.observables {
                let _ = write!(s, ",{}", format_float(v[i]));
            }
            s.push('\n');
        }
        s
    }

    /// JSON dump of the final state with `[re, im]` pairs.
    pub fn final_state_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Dump<'a> {
            layout: &'a ModeLayout,
            time_s: f64,
            rho: Vec<Vec<[f64; 2]>>,
        }
        serde_json::to_value(Dump {
            layout: self.final_state().layout(),
            time_s: *self.times.last().unwrap(),
            rho: matrix_to_pairs(self.final_state().matrix()),
        })
        .expect("plain data serializes")
    }
}

/// Integrate `generator` from `rho0` at `times[0]`, reporting states at every
/// entry of `times`.
///
/// Fixed-step RK4; every output interval is split into equal substeps no
/// longer than the current step. With `convergence_tol` set, the whole run
/// is repeated at half the step until the final states agree.
pub fn evolve(
    generator: &LindbladGenerator,
    rho0: &DensityMatrix,
    times: &[f64],
    control: &StepControl,
) -> Result<Trajectory> {
    if generator.layout() != rho0.layout() {
        return Err(Error::LayoutMismatch(format!(
            "generator on {} but initial state on {}",
            generator.layout().describe(),
            rho0.layout().describe()
        )));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("time grid must be finite and strictly increasing".into()));
    }
    rho0.validate(1e-9, 1e-9, -1e-7)?;

    let scale = generator.frequency_scale();
    let mut h = match control.step {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::InvalidArgument(format!("step {h} must be > 0"))),
        None if scale > 0.0 => 1.0 / (50.0 * scale),
        None => f64::INFINITY,
    };
    let compiled = Compiled::new(generator);

    let mut coarse = integrate(&compiled, rho0, times, h, control)?;
    if let Some(tol) = control.convergence_tol {
        if h.is_finite() {
            let mut halvings = 0;
            loop {
                if h / 2.0 < control.min_step || halvings >= control.max_halvings {
                    return Err(Error::Numerical(format!(
                        "step-size underflow: no convergence to {tol:.1e} after {halvings} halvings (step {h:.3e} s)"
                    )));
                }
                h /= 2.0;
                halvings += 1;
                let fine = integrate(&compiled, rho0, times, h, control)?;
                let diff = (fine.final_state().matrix() - coarse.final_state().matrix())
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max);
                coarse = fine;
                if diff <= tol {
                    break;
                }
            }
        }
    }
    for (mode, p) in &coarse.truncation {
        if *p > 1e-4 {
            log::warn!("top Fock level of `{mode}` reached population {p:.2e}; consider a larger truncation");
        }
    }
    Ok(coarse)
}

fn integrate(
    compiled: &Compiled<'_>,
    rho0: &DensityMatrix,
    times: &[f64],
    h: f64,
    control: &StepControl,
) -> Result<Trajectory> {
    let d = compiled.dim;
    let n = d * d;
    let layout = rho0.layout().clone();
    let mut rho: Vec<C64> = rho0.matrix().as_slice().to_vec();
    let mut k1 = vec![ZERO; n];
    let mut k2 = vec![ZERO; n];
    let mut k3 = vec![ZERO; n];
    let mut k4 = vec![ZERO; n];
    let mut tmp = vec![ZERO; n];
    let mut y = vec![ZERO; n];
    let mut z = vec![ZERO; n];

    let mut states = Vec::with_capacity(times.len());
    states.push(rho0.clone());
    let mut truncation = rho0.truncation_populations();
    let mut used_step: f64 = 0.0;
    let breakpoints = compiled.generator.breakpoints();

    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        // Substeps never straddle an envelope jump, so RK4 keeps its order.
        let mut pieces = vec![t0];
        pieces.extend(breakpoints.iter().copied().filter(|&b| b > t0 && b < t1));
        pieces.push(t1);
        for piece in pieces.windows(2) {
            let (a, b) = (piece[0], piece[1]);
            let span = b - a;
            let steps = if h.is_finite() { ((span / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize } else { 1 };
            let dt = span / steps as f64;
            used_step = used_step.max(dt);
            let bounds = (a, b);
            for s in 0..steps {
                let t = a + s as f64 * dt;
                compiled.eval(t, bounds, &rho, &mut k1, &mut y, &mut z);
                axpy_into(&rho, &k1, 0.5 * dt, &mut tmp);
                compiled.eval(t + 0.5 * dt, bounds, &tmp, &mut k2, &mut y, &mut z);
                axpy_into(&rho, &k2, 0.5 * dt, &mut tmp);
                compiled.eval(t + 0.5 * dt, bounds, &tmp, &mut k3, &mut y, &mut z);
                axpy_into(&rho, &k3, dt, &mut tmp);
                compiled.eval(t + dt, bounds, &tmp, &mut k4, &mut y, &mut z);
                let c = dt / 6.0;
                for i in 0..n {
                    rho[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * c;
                }
                // The right-hand side is only a Lindbladian on Hermitian input;
                // an anti-Hermitian roundoff component would grow under it.
                hermitize(&mut rho, d);
            }
        }
        let dt = used_step;
        let m = CMatrix::from_column_slice(d, d, &rho);
        let state = DensityMatrix::from_matrix_unchecked(layout.clone(), m)?;
        let tr = state.trace();
        if !((tr.re - 1.0).abs() <= control.trace_tol) || !tr.re.is_finite() {
            return Err(Error::Numerical(format!(
                "trace drifted to {} at t = {t1:.6e} s (step {dt:.3e} s)",
                tr.re
            )));
        }
        for (slot, (_, p)) in truncation.iter_mut().zip(state.truncation_populations()) {
            slot.1 = slot.1.max(p);
        }
        states.push(state);
    }
    Ok(Trajectory { times: times.to_vec(), states, observables: Vec::new(), step: used_step, truncation })
}

fn hermitize(m: &mut [C64], d: usize) {
    for j in 0..d {
        m[j + j * d].im = 0.0;
        for i in 0..j {
            let v = (m[i + j * d] + m[j + i * d].conj()) * 0.5;
            m[i + j * d] = v;
            m[j + i * d] = v.conj();
        }
    }
}

fn axpy_into(x: &[C64], k: &[C64], a: f64, out: &mut [C64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + ki * a;
    }
}

/// Trapezoidal mean of observable `name` over the trailing `window` seconds.
pub fn steady_observable(trajectory: &Trajectory, name: &str, window: f64) -> Result<f64> {
    let series = trajectory
        .observable(name)
        .ok_or_else(|| Error::InvalidArgument(format!("no observable `{name}` in trajectory")))?;
    if !(window >= 0.0) {
        return Err(Error::InvalidArgument(format!("window {window} must be >= 0")));
    }
    let times = &trajectory.times;
    let t_end = *times.last().unwrap();
    let start = times.iter().position(|&t| t >= t_end - window).unwrap();
    let (ts, vs) = (&times[start..], &series[start..]);
    if ts.len() < 2 {
        return Ok(*vs.last().unwrap());
    }
    let area: f64 = ts
        .windows(2)
        .zip(vs.windows(2))
        .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum();
    Ok(area / (ts[ts.len() - 1] - ts[0]))
}
