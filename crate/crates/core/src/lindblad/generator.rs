use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hilbert::{ModeLayout, Operator, C64};

/// Complex time envelope, in rad/s for drives or dimensionless for rate
/// modulation.
#[derive(Clone)]
pub enum Envelope {
    Constant(C64),
    /// `amplitude * ½[tanh((t - t_on)/ramp) - tanh((t - t_off)/ramp)]`;
    /// `ramp == 0` gives sharp edges (on for `t_on <= t < t_off`).
    SmoothRect { amplitude: C64, t_on: f64, t_off: f64, ramp: f64 },
    /// Arbitrary envelope with a caller-supplied bound on `|f(t)|`.
    Custom { f: Arc<dyn Fn(f64) -> C64 + Send + Sync>, peak: f64 },
}

impl Envelope {
    pub fn constant(amplitude: impl Into<C64>) -> Self {
        Envelope::Constant(amplitude.into())
    }

    pub fn smooth_rect(amplitude: impl Into<C64>, t_on: f64, t_off: f64, ramp: f64) -> Self {
        Envelope::SmoothRect { amplitude: amplitude.into(), t_on, t_off, ramp }
    }

    pub fn custom(f: impl Fn(f64) -> C64 + Send + Sync + 'static, peak: f64) -> Self {
        Envelope::Custom { f: Arc::new(f), peak }
    }

    pub fn eval(&self, t: f64) -> C64 {
        match self {
            Envelope::Constant(c) => *c,
            Envelope::SmoothRect { amplitude, t_on, t_off, ramp } => {
                let shape = if *ramp > 0.0 {
                    0.5 * (((t - t_on) / ramp).tanh() - ((t - t_off) / ramp).tanh())
                } else if t >= *t_on && t < *t_off {
                    1.0
                } else {
                    0.0
                };
                amplitude * shape
            }
            Envelope::Custom { f, .. } => f(t),
        }
    }

    /// Value on the open interval `(lo, hi)`, which must not contain a
    /// breakpoint; sharp edges take the value of the interval they bound.
    pub fn eval_within(&self, t: f64, lo: f64, hi: f64) -> C64 {
        match self {
            Envelope::SmoothRect { ramp, .. } if *ramp == 0.0 => self.eval(0.5 * (lo + hi)),
            _ => self.eval(t),
        }
    }

    /// Times where the envelope jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Envelope::SmoothRect { t_on, t_off, ramp, .. } if *ramp == 0.0 => vec![*t_on, *t_off],
            _ => Vec::new(),
        }
    }

    /// Upper bound on `|eval(t)|`.
    pub fn peak(&self) -> f64 {
        match self {
            Envelope::Constant(c) => c.norm(),
            Envelope::SmoothRect { amplitude, .. } => amplitude.norm(),
            Envelope::Custom { peak, .. } => *peak,
        }
    }

    /// Same shape, amplitude multiplied by `c`.
    pub fn scaled(&self, c: impl Into<C64>) -> Envelope {
        let c = c.into();
        match self {
            Envelope::Constant(a) => Envelope::Constant(a * c),
            Envelope::SmoothRect { amplitude, t_on, t_off, ramp } => Envelope::SmoothRect {
                amplitude: amplitude * c,
                t_on: *t_on,
                t_off: *t_off,
                ramp: *ramp,
            },
            Envelope::Custom { f, peak } => {
                let f = f.clone();
                Envelope::Custom { f: Arc::new(move |t| f(t) * c), peak: peak * c.norm() }
            }
        }
    }
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Envelope::Constant(c) => write!(f, "Constant({c})"),
            Envelope::SmoothRect { amplitude, t_on, t_off, ramp } => {
                write!(f, "SmoothRect({amplitude}, {t_on:e}..{t_off:e}, ramp {ramp:e})")
            }
            Envelope::Custom { peak, .. } => write!(f, "Custom(peak {peak})"),
        }
    }
}

/// A dissipation channel `rate · |s(t)|² · D[op]`; `modulation` is `None`
/// for a static rate.
#[derive(Clone, Debug)]
pub struct Collapse {
    pub label: String,
    pub rate: f64,
    pub op: Operator,
    pub modulation: Option<Envelope>,
}

impl Collapse {
    pub fn rate_at(&self, t: f64) -> f64 {
        self.rate_within(t, t, t)
    }

    pub(crate) fn rate_within(&self, t: f64, lo: f64, hi: f64) -> f64 {
        match &self.modulation {
            Some(s) => self.rate * s.eval_within(t, lo, hi).norm_sqr(),
            None => self.rate,
        }
    }
}

/// A Hamiltonian drive `ε(t) A + ε*(t) A†`.
#[derive(Clone, Debug)]
pub struct Drive {
    pub label: String,
    pub envelope: Envelope,
    pub coupling: Operator,
}

/// Static Hamiltonian (rad/s) plus collapse channels and drives, all on one
/// layout.
#[derive(Clone, Debug)]
pub struct LindbladGenerator {
    layout: ModeLayout,
    hamiltonian: Operator,
    collapses: Vec<Collapse>,
    drives: Vec<Drive>,
}

impl LindbladGenerator {
    pub fn new(hamiltonian: Operator) -> Result<Self> {
        if !hamiltonian.is_hermitian(1e-9 * hamiltonian.max_abs().max(1.0)) {
            return Err(Error::InvalidArgument("Hamiltonian is not Hermitian".into()));
        }
        Ok(Self {
            layout: hamiltonian.layout().clone(),
            hamiltonian,
            collapses: Vec::new(),
            drives: Vec::new(),
        })
    }

    /// Generator with zero Hamiltonian.
    pub fn empty(layout: &ModeLayout) -> Self {
        Self {
            layout: layout.clone(),
            hamiltonian: Operator::zero(layout),
            collapses: Vec::new(),
            drives: Vec::new(),
        }
    }

    pub fn with_collapse(self, label: &str, rate: f64, op: Operator) -> Result<Self> {
        self.push_collapse(label, rate, op, None)
    }

    pub fn with_modulated_collapse(self, label: &str, rate: f64, op: Operator, modulation: Envelope) -> Result<Self> {
        self.push_collapse(label, rate, op, Some(modulation))
    }

    fn push_collapse(mut self, label: &str, rate: f64, op: Operator, modulation: Option<Envelope>) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidArgument(format!("collapse `{label}` has rate {rate}; rates must be finite and >= 0")));
        }
        self.check_layout(op.layout(), label)?;
        self.collapses.push(Collapse { label: label.to_string(), rate, op, modulation });
        Ok(self)
    }

    pub fn with_drive(mut self, label: &str, envelope: Envelope, coupling: Operator) -> Result<Self> {
        self.check_layout(coupling.layout(), label)?;
        self.drives.push(Drive { label: label.to_string(), envelope, coupling });
        Ok(self)
    }

    fn check_layout(&self, other: &ModeLayout, label: &str) -> Result<()> {
        if other != &self.layout {
            return Err(Error::LayoutMismatch(format!(
                "`{label}` is on {} but the generator is on {}",
                other.describe(),
                self.layout.describe()
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn collapses(&self) -> &[Collapse] {
        &self.collapses
    }

    pub fn drives(&self) -> &[Drive] {
        &self.drives
    }

    pub fn collapse(&self, label: &str) -> Option<&Collapse> {
        self.collapses.iter().find(|c| c.label == label)
    }

    /// `H + Σ (ε_k(t) A_k + h.c.)`.
    pub fn hamiltonian_at(&self, t: f64) -> Operator {
        let mut h = self.hamiltonian.clone();
        for d in &self.drives {
            let e = d.envelope.eval(t);
            let term = d.coupling.scale(e);
            h = &(&h + &term) + &term.adjoint();
        }
        h
    }

    /// Sorted discontinuity times of all envelopes.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .drives
            .iter()
            .flat_map(|d| d.envelope.breakpoints())
            .chain(self.collapses.iter().filter_map(|c| c.modulation.as_ref()).flat_map(|m| m.breakpoints()))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Largest rate or frequency present, used for the default step.
    pub fn frequency_scale(&self) -> f64 {
        let mut scale = self.hamiltonian.norm_inf();
        for d in &self.drives {
            scale = scale.max(2.0 * d.envelope.peak() * d.coupling.norm_inf());
        }
        for c in &self.collapses {
            let peak = c.modulation.as_ref().map_or(1.0, |m| m.peak().powi(2));
            let ldl = &c.op.adjoint() * &c.op;
            scale = scale.max(c.rate * peak * ldl.norm_inf());
        }
        scale
    }
}
