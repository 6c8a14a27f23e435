use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, DensityMatrix, C64, ZERO};

/// Qubit outcome attached to a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitLabel {
    G,
    E,
}

/// Complex heterodyne records, stored row-major (trace by trace).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEnsemble {
    pub sample_period: f64,
    pub n_samples: usize,
    pub data: Vec<C64>,
    pub labels: Option<Vec<QubitLabel>>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    sample_period: f64,
    n_traces: usize,
    n_samples: usize,
    seed: u64,
    labels: Option<Vec<QubitLabel>>,
}

impl TraceEnsemble {
    pub fn new(sample_period: f64, n_samples: usize, data: Vec<C64>, labels: Option<Vec<QubitLabel>>, seed: u64) -> Result<Self> {
        if n_samples == 0 || data.len() % n_samples != 0 {
            return Err(Error::InvalidArgument(format!("{} samples do not split into traces of {n_samples}", data.len())));
        }
        if let Some(l) = &labels {
            if l.len() != data.len() / n_samples {
                return Err(Error::InvalidArgument(format!("{} labels for {} traces", l.len(), data.len() / n_samples)));
            }
        }
        Ok(Self { sample_period, n_samples, data, labels, seed })
    }

    pub fn n_traces(&self) -> usize {
        self.data.len() / self.n_samples
    }

    pub fn trace(&self, i: usize) -> &[C64] {
        &self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn traces(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(self.n_samples)
    }

    /// JSON header line, then little-endian `f64` pairs `(re, im)`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            sample_period: self.sample_period,
            n_traces: self.n_traces(),
            n_samples: self.n_samples,
            seed: self.seed,
            labels: self.labels.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.data.len() * 16);
        for z in &self.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: Header = serde_json::from_slice(&line)?;
        let n = header.n_traces * header.n_samples;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != n * 16 {
            return Err(Error::InvalidArgument(format!("trace body holds {} bytes, header implies {}", body.len(), n * 16)));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        let data = body.chunks_exact(16).map(|c| C64::new(f(&c[..8]), f(&c[8..]))).collect();
        Self::new(header.sample_period, header.n_samples, data, header.labels, header.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Unit-norm temporal mode with its largest-magnitude sample real positive.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemporalMode {
    pub f: Vec<C64>,
}

impl TemporalMode {
    /// Normalizes and phase-fixes `samples`.
    pub fn new(samples: Vec<C64>) -> Result<Self> {
        let norm = samples.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("temporal mode must have finite nonzero norm".into()));
        }
        let (k, peak) = samples.iter().copied().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
        let phase = peak.conj() / peak.norm();
        let mut f: Vec<C64> = samples.into_iter().map(|z| z * phase / norm).collect();
        f[k] = C64::new(peak.norm() / norm, 0.0);
        Ok(Self { f })
    }

    /// Sampled `exp(-(t - t0)^2 / (2 w^2)) exp(i phi t)`, normalized.
    pub fn gaussian(n_samples: usize, sample_period: f64, center: f64, width: f64, detuning: f64) -> Result<Self> {
        Self::new(
            (0..n_samples)
                .map(|j| {
                    let t = j as f64 * sample_period;
                    C64::from_polar((-(t - center).powi(2) / (2.0 * width * width)).exp(), detuning * t)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// `|<self|other>|^2`.
    pub fn overlap(&self, other: &TemporalMode) -> f64 {
        self.f.iter().zip(&other.f).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr()
    }
}

/// Settings for [`generate_traces`].
#[derive(Clone, Debug, Serialize)]
pub struct TraceSettings {
    pub gain: f64,
    /// Added amplifier noise quanta in the signal mode.
    pub n_h: f64,
    pub n_traces: usize,
    pub sample_period: f64,
    pub seed: u64,
}

/// Cap on rejection attempts per trace.
pub const MAX_ATTEMPTS: usize = 1_000_000;

/// Husimi-Q rejection sampler for a single-mode state.
struct QSampler {
    rho: CMatrix,
    sigma2: f64,
    bound: f64,
}

impl QSampler {
    fn new(rho: &DensityMatrix) -> Result<Self> {
        if rho.layout().modes().len() != 1 {
            return Err(Error::InvalidArgument("trace generation needs a single-mode state".into()));
        }
        let m = rho.matrix().clone();
        let d = m.nrows();
        let sqrt_p: Vec<f64> = (0..d).map(|n| m[(n, n)].re.max(0.0).sqrt()).collect();
        let n_mean: f64 = (0..d).map(|n| n as f64 * m[(n, n)].re).sum();
        // |<a|rho|a>| <= (sum_n sqrt(rho_nn) |<n|a>|)^2, a radial bound; the
        // proposal is a centred complex Gaussian with E|a|^2 = sigma2.
        let envelope = |r: f64, s2: f64| {
            let mut term = (-r / 2.0).exp();
            let mut acc = 0.0;
            for (n, sp) in sqrt_p.iter().enumerate() {
                if n > 0 {
                    term *= (r / n as f64).sqrt();
                }
                acc += sp * term;
            }
            s2 * (r / s2).exp() * acc * acc
        };
        let r_max = 4.0 * (d as f64 + 10.0) + 20.0 * n_mean;
        let steps = 20_000;
        let mut best = (f64::INFINITY, 1.0);
        for k in 0..12 {
            let s2 = 1.0 + n_mean + 0.25 * k as f64;
            let sup = (0..=steps).map(|i| envelope(r_max * i as f64 / steps as f64, s2)).fold(0.0, f64::max);
            let tail = envelope(2.0 * r_max, s2);
            if tail < sup && sup < best.0 {
                best = (sup, s2);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::Numerical("no finite rejection bound for this state".into()));
        }
        Ok(Self { rho: m, sigma2: best.1, bound: best.0 * 1.02 })
    }

    fn q_times_pi(&self, alpha: C64, scratch: &mut [C64]) -> f64 {
        let r = alpha.norm_sqr();
        let mut c = C64::new((-r / 2.0).exp(), 0.0);
        for (n, slot) in scratch.iter_mut().enumerate() {
            if n > 0 {
                c *= alpha / (n as f64).sqrt();
            }
            *slot = c;
        }
        let d = scratch.len();
        let mut acc = ZERO;
        for j in 0..d {
            let mut col = ZERO;
            for i in 0..d {
                col += scratch[i].conj() * self.rho[(i, j)];
            }
            acc += col * scratch[j];
        }
        acc.re
    }

    fn sample(&self, rng: &mut ChaCha20Rng, scratch: &mut [C64]) -> Result<C64> {
        let s = (self.sigma2 / 2.0).sqrt();
        for _ in 0..MAX_ATTEMPTS {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let alpha = C64::new(re * s, im * s);
            let r = alpha.norm_sqr();
            let proposal = (-r / self.sigma2).exp() / self.sigma2;
            let ratio = self.q_times_pi(alpha, scratch) / (self.bound * proposal);
            if ratio > 1.0 + 1e-9 {
                return Err(Error::Numerical(format!("rejection bound violated (ratio {ratio})")));
            }
            let u: f64 = rng.random();
            if u < ratio {
                return Ok(alpha);
            }
        }
        Err(Error::Numerical(format!("rejection sampling exceeded {MAX_ATTEMPTS} attempts")))
    }
}

fn complex_normal(rng: &mut ChaCha20Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Synthetic records `z = sqrt(G) [(s + nu) f + w_perp]`: `s` drawn from the
/// Q function of `rho`, `nu` complex Gaussian of variance `n_h`, and `w_perp`
/// white noise of variance `1 + n_h` per mode projected off `f`. Trace `i`
/// uses ChaCha20 stream `i` of `seed`, so output is independent of threads.
pub fn generate_traces(rho: &DensityMatrix, mode: &TemporalMode, settings: &TraceSettings) -> Result<TraceEnsemble> {
    if !(settings.gain > 0.0) || !(settings.n_h >= 0.0) {
        return Err(Error::InvalidArgument(format!("need G > 0 and n_h >= 0 (got {}, {})", settings.gain, settings.n_h)));
    }
    let norm: f64 = mode.f.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("mode norm {norm} is not 1")));
    }
    let sampler = QSampler::new(rho)?;
    let d = rho.dim();
    let k = mode.len();
    let amp = settings.gain.sqrt();
    let rows = (0..settings.n_traces)
        .into_par_iter()
        .map_init(
            || vec![ZERO; d],
            |scratch, i| -> Result<Vec<C64>> {
                let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
                rng.set_stream(i as u64);
                let s = sampler.sample(&mut rng, scratch)? + complex_normal(&mut rng, settings.n_h);
                let w: Vec<C64> = (0..k).map(|_| complex_normal(&mut rng, 1.0 + settings.n_h)).collect();
                let c: C64 = mode.f.iter().zip(&w).map(|(f, w)| f.conj() * w).sum();
                Ok(mode.f.iter().zip(&w).map(|(f, w)| (f * (s - c) + w) * amp).collect())
            },
        )
        .collect::<Result<Vec<_>>>()?;
    TraceEnsemble::new(settings.sample_period, k, rows.concat(), None, settings.seed)
}

/// Autocorrelation `M_jk = <z_j^* z_k>` and its eigen-decomposition.
#[derive(Clone, Debug, Serialize)]
pub struct ModeExtraction {
    pub mode: TemporalMode,
    /// Eigenvalues, descending.
    pub spectrum: Vec<f64>,
}

impl ModeExtraction {
    /// Top eigenvalue over the median, minus one.
    pub fn excess_over_median(&self) -> f64 {
        let mut s = self.spectrum.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        self.spectrum[0] / median - 1.0
    }
}

/// Top eigenvector of the autocorrelation matrix as the temporal mode.
///
/// For `z = c f + noise`, `M = E|c|^2 conj(f) f^T + ...`, so the mode is the
/// conjugate of the leading eigenvector.
pub fn extract_mode(ensemble: &TraceEnsemble) -> Result<ModeExtraction> {
    let n = ensemble.n_traces();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("mode extraction needs >= 2 traces, got {n}")));
    }
    let k = ensemble.n_samples;
    let blocks: Vec<CMatrix> = ensemble
        .data
        .par_chunks(k * 1024)
        .map(|chunk| {
            let mut m = CMatrix::zeros(k, k);
            for z in chunk.chunks_exact(k) {
                for c in 0..k {
                    for r in 0..k {
                        m[(r, c)] += z[r].conj() * z[c];
                    }
                }
            }
            m
        })
        .collect();
    let m = pairwise_matrix_sum(&blocks) / C64::new(n as f64, 0.0);
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::try_new(m, 1e-14, 10_000).ok_or_else(|| Error::Numerical("eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvectors.column(order[0]);
    let mode = TemporalMode::new(top.iter().map(|z| z.conj()).collect())?;
    Ok(ModeExtraction { mode, spectrum: order.iter().map(|&i| eig.eigenvalues[i]).collect() })
}

fn pairwise_matrix_sum(blocks: &[CMatrix]) -> CMatrix {
    match blocks.len() {
        0 => unreachable!("at least one block"),
        1 => blocks[0].clone(),
        n => pairwise_matrix_sum(&blocks[..n / 2]) + pairwise_matrix_sum(&blocks[n / 2..]),
    }
}

/// `S = sum_j f^*(t_j) z(t_j)` for every trace.
pub fn project(ensemble: &TraceEnsemble, mode: &TemporalMode) -> Result<Vec<C64>> {
    if mode.len() != ensemble.n_samples {
        return Err(Error::InvalidArgument(format!("mode has {} samples, traces have {}", mode.len(), ensemble.n_samples)));
    }
    Ok(ensemble
        .data
        .par_chunks(ensemble.n_samples)
        .map(|z| z.iter().zip(&mode.f).map(|(z, f)| f.conj() * z).sum())
        .collect())
}
