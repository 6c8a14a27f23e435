use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{annihilation, DensityMatrix, C64, ONE, ZERO};

use super::traces::{project, TemporalMode, TraceEnsemble};

/// Highest total order `n + m` kept in a table.
pub const MAX_ORDER: usize = 4;
/// Number of jackknife blocks.
pub const JACKKNIFE_BLOCKS: usize = 50;

const W: usize = MAX_ORDER + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    RawS,
    Noise,
    Signal,
    Model,
}

/// Entries `<(a^+)^n a^m>` for `n + m <= 4` with 1-sigma errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    pub stage: Stage,
    pub gain: Option<f64>,
    values: [[C64; W]; W],
    sigma: [[f64; W]; W],
}

/// One serialized table entry.
#[derive(Serialize, Deserialize)]
struct Entry {
    n: usize,
    m: usize,
    value: [f64; 2],
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    stage: Stage,
    gain: Option<f64>,
    entries: Vec<Entry>,
}

impl Serialize for MomentTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = orders()
            .map(|(n, m)| Entry { n, m, value: [self.values[n][m].re, self.values[n][m].im], sigma: self.sigma[n][m] })
            .collect();
        TableJson { stage: self.stage, gain: self.gain, entries }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TableJson::deserialize(d)?;
        let mut t = MomentTable::zero(j.stage, j.gain);
        for e in j.entries {
            if e.n + e.m > MAX_ORDER {
                return Err(serde::de::Error::custom(format!("moment ({}, {}) exceeds order {MAX_ORDER}", e.n, e.m)));
            }
            t.values[e.n][e.m] = C64::new(e.value[0], e.value[1]);
            t.sigma[e.n][e.m] = e.sigma;
        }
        Ok(t)
    }
}

/// All `(n, m)` with `n + m <= MAX_ORDER`, by increasing total order.
pub fn orders() -> impl Iterator<Item = (usize, usize)> {
    (0..=MAX_ORDER).flat_map(|k| (0..=k).map(move |n| (n, k - n)))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl MomentTable {
    fn zero(stage: Stage, gain: Option<f64>) -> Self {
        let mut values = [[ZERO; W]; W];
        values[0][0] = ONE;
        Self { stage, gain, values, sigma: [[0.0; W]; W] }
    }

    /// Builds a table from the `n <= m` half; the rest is filled by conjugation.
    pub fn from_fn(stage: Stage, gain: Option<f64>, mut f: impl FnMut(usize, usize) -> (C64, f64)) -> Self {
        let mut t = Self::zero(stage, gain);
        for (n, m) in orders().filter(|(n, m)| n <= m) {
            let (v, s) = f(n, m);
            t.set(n, m, v, s);
        }
        t.values[0][0] = ONE;
        t.sigma[0][0] = 0.0;
        t
    }

    fn set(&mut self, n: usize, m: usize, v: C64, s: f64) {
        let v = if n == m { C64::new(v.re, 0.0) } else { v };
        self.values[n][m] = v;
        self.values[m][n] = v.conj();
        self.sigma[n][m] = s;
        self.sigma[m][n] = s;
    }

    pub fn get(&self, n: usize, m: usize) -> C64 {
        assert!(n + m <= MAX_ORDER, "moment ({n}, {m}) exceeds order {MAX_ORDER}");
        self.values[n][m]
    }

    pub fn sigma(&self, n: usize, m: usize) -> f64 {
        assert!(n + m <= MAX_ORDER, "moment ({n}, {m}) exceeds order {MAX_ORDER}");
        self.sigma[n][m]
    }

    /// Normally ordered moments of a single-mode state.
    pub fn of_state(rho: &DensityMatrix) -> Result<Self> {
        let layout = rho.layout();
        if layout.modes().len() != 1 {
            return Err(Error::InvalidArgument("moments need a single-mode state".into()));
        }
        let a = annihilation(layout, &layout.modes()[0].name)?;
        let a = a.matrix();
        let ad = a.adjoint();
        let mut pa = vec![nalgebra::DMatrix::identity(a.nrows(), a.ncols())];
        let mut pd = pa.clone();
        for k in 1..=MAX_ORDER {
            pa.push(&pa[k - 1] * a);
            pd.push(&pd[k - 1] * &ad);
        }
        let r = rho.matrix();
        Ok(Self::from_fn(Stage::Model, None, |n, m| ((r * &pd[n] * &pa[m]).trace(), 0.0)))
    }

    /// Gives the table a different stage tag.
    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn max_abs_diff(&self, other: &MomentTable) -> f64 {
        orders().map(|(n, m)| (self.values[n][m] - other.values[n][m]).norm()).fold(0.0, f64::max)
    }

    fn scaled(&self, stage: Stage, gain: f64) -> Self {
        let mut t = self.clone();
        t.stage = stage;
        t.gain = Some(gain);
        for (n, m) in orders() {
            let f = gain.powf(-((n + m) as f64) / 2.0);
            t.values[n][m] *= f;
            t.sigma[n][m] *= f;
        }
        t
    }
}

fn sample_terms(s: C64) -> [[C64; W]; W] {
    let mut p = [ONE; W];
    for k in 1..W {
        p[k] = p[k - 1] * s;
    }
    let mut out = [[ZERO; W]; W];
    for (n, m) in orders() {
        out[n][m] = p[n].conj() * p[m];
    }
    out
}

fn add(a: &mut [[C64; W]; W], b: &[[C64; W]; W]) {
    for (n, m) in orders() {
        a[n][m] += b[n][m];
    }
}

/// Empirical `<(S^*)^n S^m>` with jackknife errors over contiguous blocks.
///
/// Each block is summed sequentially and block sums are combined in order,
/// so the result does not depend on the thread count.
pub fn raw_moments(samples: &[C64]) -> Result<MomentTable> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let blocks = JACKKNIFE_BLOCKS.min(n);
    let bounds: Vec<(usize, usize)> = (0..blocks).map(|b| (b * n / blocks, (b + 1) * n / blocks)).collect();
    let sums: Vec<[[C64; W]; W]> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = [[ZERO; W]; W];
            for &s in &samples[lo..hi] {
                add(&mut acc, &sample_terms(s));
            }
            acc
        })
        .collect();
    let mut total = [[ZERO; W]; W];
    for s in &sums {
        add(&mut total, s);
    }
    let nf = n as f64;
    Ok(MomentTable::from_fn(Stage::RawS, None, |i, j| {
        let mean = total[i][j] / nf;
        let sigma = if blocks < 2 {
            0.0
        } else {
            let loo: Vec<C64> =
                sums.iter().zip(&bounds).map(|(s, (lo, hi))| (total[i][j] - s[i][j]) / (n - (hi - lo)) as f64).collect();
            let avg = loo.iter().sum::<C64>() / blocks as f64;
            let var: f64 = loo.iter().map(|x| (x - avg).norm_sqr()).sum::<f64>() * (blocks - 1) as f64 / blocks as f64;
            var.sqrt()
        };
        (mean, sigma)
    }))
}

/// Added-noise moments `<h^n (h^+)^m> = G^{-(n+m)/2} <(S^*)^n S^m>` from a
/// vacuum-state calibration run.
pub fn noise_moments(vacuum: &TraceEnsemble, mode: &TemporalMode, gain: f64) -> Result<MomentTable> {
    noise_moments_from_samples(&project(vacuum, mode)?, gain)
}

pub fn noise_moments_from_samples(samples: &[C64], gain: f64) -> Result<MomentTable> {
    check_gain(gain)?;
    Ok(raw_moments(samples)?.scaled(Stage::Noise, gain))
}

fn check_gain(gain: f64) -> Result<()> {
    if gain > 0.0 && gain.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gain must be positive and finite, got {gain}")))
    }
}

/// Raw-S moments implied by signal and noise moments:
/// `<(S^+)^n S^m> = G^{(n+m)/2} sum_ij C(m,j) C(n,i) <(a^+)^i a^j> <h^{n-i} (h^+)^{m-j}>`.
pub fn forward_moments(signal: &MomentTable, noise: &MomentTable, gain: f64) -> Result<MomentTable> {
    check_gain(gain)?;
    let mut out = MomentTable::from_fn(Stage::RawS, Some(gain), |n, m| {
        let mut acc = ZERO;
        for i in 0..=n {
            for j in 0..=m {
                acc += signal.get(i, j) * noise.get(n - i, m - j) * (binomial(m, j) * binomial(n, i));
            }
        }
        (acc * gain.powf((n + m) as f64 / 2.0), 0.0)
    });
    out.gain = Some(gain);
    Ok(out)
}

/// Solves the forward relation for the signal moments, lowest order first.
/// Errors are propagated linearly treating table entries as independent.
pub fn invert_moments(raw: &MomentTable, noise: &MomentTable, gain: f64) -> Result<MomentTable> {
    check_gain(gain)?;
    let mut sig = MomentTable::zero(Stage::Signal, Some(gain));
    for (n, m) in orders().filter(|(n, m)| n <= m) {
        if n + m == 0 {
            continue;
        }
        let scale = gain.powf(-((n + m) as f64) / 2.0);
        let mut acc = raw.get(n, m) * scale;
        let mut var = (raw.sigma(n, m) * scale).powi(2);
        for i in 0..=n {
            for j in 0..=m {
                if i == n && j == m {
                    continue;
                }
                let c = binomial(m, j) * binomial(n, i);
                let (s, h) = (sig.get(i, j), noise.get(n - i, m - j));
                acc -= s * h * c;
                var += c * c * (h.norm_sqr() * sig.sigma(i, j).powi(2) + s.norm_sqr() * noise.sigma(n - i, m - j).powi(2));
            }
        }
        sig.set(n, m, acc, var.sqrt());
    }
    Ok(sig)
}

/// Gain estimate from coherent calibration runs.
#[derive(Clone, Debug, Serialize)]
pub struct GainEstimate {
    pub gain: f64,
    pub sigma: f64,
    /// Complex slope of `<S>` against `<a>`.
    pub slope: [f64; 2],
}

/// Least-squares slope of `<S>` against the known `<a>` through the origin;
/// `G = |slope|^2`.
pub fn calibrate_gain(tables: &[MomentTable], amplitudes: &[C64]) -> Result<GainEstimate> {
    if tables.len() != amplitudes.len() {
        return Err(Error::InvalidArgument(format!("{} tables for {} amplitudes", tables.len(), amplitudes.len())));
    }
    let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("calibration amplitudes are all zero".into()));
    }
    let mut distinct: Vec<C64> = Vec::new();
    for a in amplitudes {
        if !distinct.iter().any(|d| (d - a).norm() < 1e-12) {
            distinct.push(*a);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("gain calibration needs at least two distinct amplitudes".into()));
    }
    let slope: C64 = tables.iter().zip(amplitudes).map(|(t, a)| a.conj() * t.get(0, 1)).sum::<C64>() / norm;
    let var_slope: f64 = tables.iter().zip(amplitudes).map(|(t, a)| a.norm_sqr() * t.sigma(0, 1).powi(2)).sum::<f64>() / (norm * norm);
    Ok(GainEstimate { gain: slope.norm_sqr(), sigma: 2.0 * slope.norm() * var_slope.sqrt(), slope: [slope.re, slope.im] })
}
