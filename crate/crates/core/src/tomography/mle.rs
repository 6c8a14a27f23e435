use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{fidelity, lowering_matrix, matrix_to_pairs, CMatrix, DensityMatrix, ModeLayout, C64};

use super::FIELD_MODE;

use super::moments::{orders, MomentTable};

pub const DEFAULT_N_FOCK: usize = 6;
pub const RESTARTS: usize = 8;
const REL_TOL: f64 = 1e-12;
const MAX_ITER: usize = 5000;
const HISTORY: usize = 10;

#[derive(Clone, Debug)]
pub struct ReconstructedState {
    pub rho: DensityMatrix,
    /// Sum of squared moment residuals over every `(n, m)` with `n + m <= 4`.
    pub distance: f64,
    pub converged: bool,
    pub fidelities: Vec<(String, f64)>,
}

impl ReconstructedState {
    /// Adds the fidelity to each named target (same layout as `rho`).
    pub fn with_targets(mut self, targets: &[(&str, &DensityMatrix)]) -> Result<Self> {
        for (name, t) in targets {
            self.fidelities.push((name.to_string(), fidelity(&self.rho, t)?));
        }
        Ok(self)
    }

    pub fn fidelity_to(&self, name: &str) -> Option<f64> {
        self.fidelities.iter().find(|(n, _)| n == name).map(|(_, f)| *f)
    }
}

impl Serialize for ReconstructedState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            n_fock: usize,
            rho: Vec<Vec<[f64; 2]>>,
            distance: f64,
            converged: bool,
            fidelities: &'a [(String, f64)],
        }
        Out {
            n_fock: self.rho.dim(),
            rho: matrix_to_pairs(self.rho.matrix()),
            distance: self.distance,
            converged: self.converged,
            fidelities: &self.fidelities,
        }
        .serialize(s)
    }
}

/// Distance between target moments and those of `T^+ T / Tr(T^+ T)`.
struct Objective {
    d: usize,
    ops: Vec<(usize, usize, CMatrix)>,
    target: Vec<C64>,
}

impl Objective {
    fn new(table: &MomentTable, d: usize) -> Self {
        let a = lowering_matrix(d);
        let ad = a.adjoint();
        let mut pa = vec![CMatrix::identity(d, d)];
        let mut pd = pa.clone();
        for k in 1..=super::moments::MAX_ORDER {
            pa.push(&pa[k - 1] * &a);
            pd.push(&pd[k - 1] * &ad);
        }
        let pairs: Vec<(usize, usize)> = orders().filter(|&(n, m)| n + m > 0).collect();
        let ops = pairs.iter().map(|&(n, m)| (n, m, &pd[n] * &pa[m])).collect();
        let target = pairs.iter().map(|&(n, m)| table.get(n, m)).collect();
        Self { d, ops, target }
    }

    fn n_params(&self) -> usize {
        self.d * (self.d + 1)
    }

    fn unpack(&self, x: &[f64]) -> CMatrix {
        let mut t = CMatrix::zeros(self.d, self.d);
        let mut k = 0;
        for i in 0..self.d {
            for j in 0..=i {
                t[(i, j)] = C64::new(x[k], x[k + 1]);
                k += 2;
            }
        }
        t
    }

    fn rho(&self, t: &CMatrix) -> CMatrix {
        let p = t.adjoint() * t;
        let tr = p.trace().re;
        p / C64::new(tr, 0.0)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let t = self.unpack(x);
        let tr = (t.adjoint() * &t).trace().re;
        let rho = self.rho(&t);
        let mut dist = 0.0;
        let mut k = CMatrix::zeros(self.d, self.d);
        for ((_, _, op), mu) in self.ops.iter().zip(&self.target) {
            let r = (&rho * op).trace();
            let e = mu - r;
            dist += e.norm_sqr();
            k += op * e.conj();
        }
        // D = sum |e|^2, dD = -2 Tr(drho K); K is Hermitian since (n, m) and
        // (m, n) both appear.
        let k = (&k + k.adjoint()) * C64::new(0.5, 0.0);
        let shift = (&rho * &k).trace().re;
        let w = k - CMatrix::identity(self.d, self.d) * C64::new(shift, 0.0);
        let c = &w * t.adjoint();
        let mut g = vec![0.0; x.len()];
        let mut idx = 0;
        for i in 0..self.d {
            for j in 0..=i {
                let cij = c[(j, i)];
                g[idx] = -4.0 / tr * cij.re;
                g[idx + 1] = 4.0 / tr * cij.im;
                idx += 2;
            }
        }
        (dist, g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Minimum {
    x: Vec<f64>,
    f: f64,
    converged: bool,
}

/// L-BFGS with backtracking Armijo line search.
fn lbfgs(obj: &Objective, mut x: Vec<f64>) -> Minimum {
    let (mut f, mut g) = obj.value_grad(&x);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    for _ in 0..MAX_ITER {
        let gnorm = dot(&g, &g).sqrt();
        if f <= 1e-30 || gnorm <= 1e-300 {
            return Minimum { x, f, converged: true };
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / gnorm.max(1e-300), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|qi| *qi *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v / gnorm).collect();
            slope = -gnorm;
        }
        let mut step = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = obj.value_grad(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                break Some((trial, ft, gt));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((xn, fn_, gn)) = accepted else {
            return Minimum { x, f, converged: gnorm <= 1e-10 * (1.0 + f.sqrt()) };
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == HISTORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let rel = (f - fn_) / f.max(1e-300);
        x = xn;
        f = fn_;
        g = gn;
        if rel < REL_TOL {
            return Minimum { x, f, converged: true };
        }
    }
    Minimum { x, f, converged: false }
}

/// Maximum-likelihood state for a signal moment table: minimizes the moment
/// distance over `rho = T^+ T / Tr(T^+ T)` with `T` lower triangular, from
/// `RESTARTS` random starts drawn from `seed`.
pub fn mle_reconstruct(table: &MomentTable, n_fock: usize, seed: u64) -> Result<ReconstructedState> {
    if n_fock < 3 {
        return Err(Error::InvalidArgument(format!("N_fock must be >= 3, got {n_fock}")));
    }
    for (n, m) in orders() {
        if !table.get(n, m).re.is_finite() || !table.get(n, m).im.is_finite() {
            return Err(Error::InvalidArgument(format!("moment ({n}, {m}) is not finite")));
        }
    }
    let obj = Objective::new(table, n_fock);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<Minimum> = None;
    for _ in 0..RESTARTS {
        let x0: Vec<f64> = (0..obj.n_params()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let m = lbfgs(&obj, x0);
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one restart");
    if !best.converged {
        log::warn!("moment fit did not converge; best distance {:.3e}", best.f);
    }
    let rho = obj.rho(&obj.unpack(&best.x));
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let layout = ModeLayout::single(FIELD_MODE, n_fock)?;
    Ok(ReconstructedState {
        rho: DensityMatrix::from_matrix_unchecked(layout, rho)?,
        distance: best.f.max(0.0),
        converged: best.converged,
        fidelities: Vec::new(),
    })
}
