//! Operator algebra over tensor products of truncated Fock spaces.
//!
//! Modes are ordered most-significant first: for the canonical detector
//! layout `(buffer, qubit, waste)` the flat index of `|n_b, q, n_w>` is
//! `(n_b * 2 + q) * N_w + n_w`. The qubit is a dimension-2 mode whose
//! lowering operator is `|g><e|` with `|g> = 0`, `|e> = 1`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const BUFFER: &str = "buffer";
pub const QUBIT: &str = "qubit";
pub const WASTE: &str = "waste";

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Hermiticity tolerance for validated density matrices.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for validated density matrices.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted as positive semidefinite.
pub const POSITIVITY_TOL: f64 = -1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mode {
    pub name: String,
    pub dim: usize,
}

/// Ordered list of named modes spanning a tensor-product Hilbert space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeLayout {
    modes: Vec<Mode>,
}

impl ModeLayout {
    pub fn new<I, S>(modes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let modes: Vec<Mode> = modes
            .into_iter()
            .map(|(name, dim)| Mode { name: name.into(), dim })
            .collect();
        if modes.is_empty() {
            return Err(Error::InvalidArgument("layout needs at least one mode".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if m.dim < 2 {
                return Err(Error::InvalidArgument(format!(
                    "mode `{}` has dimension {} (< 2)",
                    m.name, m.dim
                )));
            }
            if m.name == QUBIT && m.dim != 2 {
                return Err(Error::InvalidArgument(
                    "the qubit mode is projected onto two levels".into(),
                ));
            }
            if modes[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::InvalidArgument(format!("duplicate mode `{}`", m.name)));
            }
        }
        Ok(Self { modes })
    }

    /// Canonical `(buffer, qubit, waste)` layout of the full model.
    pub fn detector(n_buffer: usize, n_waste: usize) -> Result<Self> {
        Self::new([(BUFFER, n_buffer), (QUBIT, 2), (WASTE, n_waste)])
    }

    /// `(buffer, qubit)` layout of the reduced and reset models.
    pub fn buffer_qubit(n_buffer: usize) -> Result<Self> {
        Self::new([(BUFFER, n_buffer), (QUBIT, 2)])
    }

    pub fn single(name: &str, dim: usize) -> Result<Self> {
        Self::new([(name, dim)])
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Total Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.modes.iter().map(|m| m.dim).product()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn mode_dim(&self, name: &str) -> Result<usize> {
        Ok(self.modes[self.index_of(name)?].dim)
    }

    /// Layout restricted to `names`, kept in this layout's order.
    pub fn sub_layout(&self, names: &[&str]) -> Result<ModeLayout> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("empty mode subset".into()));
        }
        for n in names {
            self.index_of(n)?;
        }
        let modes = self
            .modes
            .iter()
            .filter(|m| names.contains(&m.name.as_str()))
            .cloned()
            .collect();
        Ok(ModeLayout { modes })
    }

    /// Concatenation `self ⊗ other`.
    pub fn tensor(&self, other: &ModeLayout) -> Result<ModeLayout> {
        ModeLayout::new(
            self.modes
                .iter()
                .chain(other.modes.iter())
                .map(|m| (m.name.clone(), m.dim)),
        )
    }

    /// Per-mode occupation indices of a flat basis index.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.modes.len()];
        for (k, m) in self.modes.iter().enumerate().rev() {
            out[k] = index % m.dim;
            index /= m.dim;
        }
        out
    }

    /// Flat basis index of per-mode occupations.
    pub fn flat_index(&self, digits: &[usize]) -> usize {
        self.modes
            .iter()
            .zip(digits)
            .fold(0, |acc, (m, &d)| acc * m.dim + d)
    }

    fn check_same(&self, other: &ModeLayout) -> Result<()> {
        if self != other {
            return Err(Error::LayoutMismatch(format!("{} vs {}", self.describe(), other.describe())));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let parts: Vec<String> = self.modes.iter().map(|m| format!("{}:{}", m.name, m.dim)).collect();
        format!("({})", parts.join(", "))
    }
}

/// Dense operator on a [`ModeLayout`].
///
/// The arithmetic operators panic on layout mismatch; they are meant for
/// assembling model Hamiltonians from operators built on one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: ModeLayout,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(layout: ModeLayout, matrix: CMatrix) -> Result<Self> {
        let d = layout.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::LayoutMismatch(format!(
                "matrix is {}x{}, layout {} has dimension {}",
                matrix.nrows(),
                matrix.ncols(),
                layout.describe(),
                d
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn identity(layout: &ModeLayout) -> Self {
        let d = layout.dim();
        Self { layout: layout.clone(), matrix: CMatrix::identity(d, d) }
    }

    pub fn zero(layout: &ModeLayout) -> Self {
        let d = layout.dim();
        Self { layout: layout.clone(), matrix: CMatrix::zeros(d, d) }
    }

    /// `I ⊗ … ⊗ local ⊗ … ⊗ I` with `local` acting on `mode`.
    pub fn embed(layout: &ModeLayout, mode: &str, local: &CMatrix) -> Result<Self> {
        let k = layout.index_of(mode)?;
        let dim = layout.modes()[k].dim;
        if local.nrows() != dim || local.ncols() != dim {
            return Err(Error::LayoutMismatch(format!(
                "local operator is {}x{} but mode `{mode}` has dimension {dim}",
                local.nrows(),
                local.ncols()
            )));
        }
        let mut m = CMatrix::identity(1, 1);
        for (j, mode_j) in layout.modes().iter().enumerate() {
            m = if j == k {
                m.kronecker(local)
            } else {
                m.kronecker(&CMatrix::identity(mode_j.dim, mode_j.dim))
            };
        }
        Ok(Self { layout: layout.clone(), matrix: m })
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self { layout: self.layout.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, c: impl Into<C64>) -> Self {
        let c = c.into();
        Self { layout: self.layout.clone(), matrix: &self.matrix * c }
    }

    /// `self · other`, rejecting layout mismatch.
    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        self.layout.check_same(&other.layout)?;
        Ok(Self { layout: self.layout.clone(), matrix: &self.matrix * &other.matrix })
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.layout.check_same(&other.layout)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.matrix.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        hermiticity_error(&self.matrix) <= tol
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        self.try_mul(rhs).expect("operator layout mismatch")
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layout mismatch");
        Operator { layout: self.layout.clone(), matrix: &self.matrix + &rhs.matrix }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layout mismatch");
        Operator { layout: self.layout.clone(), matrix: &self.matrix - &rhs.matrix }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale(-1.0)
    }
}

/// Truncated lowering matrix with `<n-1|a|n> = sqrt(n)`.
pub fn lowering_matrix(dim: usize) -> CMatrix {
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Annihilation operator of `mode` embedded in `layout`.
pub fn annihilation(layout: &ModeLayout, mode: &str) -> Result<Operator> {
    let dim = layout.mode_dim(mode)?;
    Operator::embed(layout, mode, &lowering_matrix(dim))
}

pub fn creation(layout: &ModeLayout, mode: &str) -> Result<Operator> {
    Ok(annihilation(layout, mode)?.adjoint())
}

pub fn number(layout: &ModeLayout, mode: &str) -> Result<Operator> {
    let a = annihilation(layout, mode)?;
    Ok(&a.adjoint() * &a)
}

/// Projector onto Fock level `level` of `mode`.
pub fn level_projector(layout: &ModeLayout, mode: &str, level: usize) -> Result<Operator> {
    let dim = layout.mode_dim(mode)?;
    if level >= dim {
        return Err(Error::InvalidArgument(format!("level {level} outside mode `{mode}` (dim {dim})")));
    }
    let mut p = CMatrix::zeros(dim, dim);
    p[(level, level)] = ONE;
    Operator::embed(layout, mode, &p)
}

/// `sigma_z = |e><e| - |g><g|` on a two-level mode.
pub fn sigma_z(layout: &ModeLayout, mode: &str) -> Result<Operator> {
    if layout.mode_dim(mode)? != 2 {
        return Err(Error::InvalidArgument(format!("mode `{mode}` is not a two-level system")));
    }
    let m = CMatrix::from_diagonal(&DVector::from_vec(vec![-ONE, ONE]));
    Operator::embed(layout, mode, &m)
}

pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues (ascending) of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Density matrix on a [`ModeLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    layout: ModeLayout,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validated constructor: Hermitian, unit trace, positive semidefinite.
    pub fn new(layout: ModeLayout, matrix: CMatrix) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(layout, matrix)?;
        rho.validate(HERMITIAN_TOL, TRACE_TOL, POSITIVITY_TOL)?;
        Ok(rho)
    }

    /// Shape-checked only; used for integrator output, which is checked
    /// against its own looser tolerances.
    pub fn from_matrix_unchecked(layout: ModeLayout, matrix: CMatrix) -> Result<Self> {
        let d = layout.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::LayoutMismatch(format!(
                "density matrix is {}x{}, layout {} has dimension {d}",
                matrix.nrows(),
                matrix.ncols(),
                layout.describe()
            )));
        }
        Ok(Self { layout, matrix })
    }

    /// `|psi><psi|` after normalizing `psi`.
    pub fn pure(layout: &ModeLayout, psi: &DVector<C64>) -> Result<Self> {
        if psi.len() != layout.dim() {
            return Err(Error::LayoutMismatch(format!(
                "state vector has length {}, layout dimension {}",
                psi.len(),
                layout.dim()
            )));
        }
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        let v = psi.unscale(norm);
        let m = &v * v.adjoint();
        Self::new(layout.clone(), m)
    }

    /// Product basis state; modes not listed are in their ground level.
    pub fn fock(layout: &ModeLayout, levels: &[(&str, usize)]) -> Result<Self> {
        let mut digits = vec![0; layout.modes().len()];
        for (name, n) in levels {
            let k = layout.index_of(name)?;
            if *n >= layout.modes()[k].dim {
                return Err(Error::InvalidArgument(format!(
                    "level {n} outside mode `{name}` (dim {})",
                    layout.modes()[k].dim
                )));
            }
            digits[k] = *n;
        }
        let idx = layout.flat_index(&digits);
        let d = layout.dim();
        let mut m = CMatrix::zeros(d, d);
        m[(idx, idx)] = ONE;
        Ok(Self { layout: layout.clone(), matrix: m })
    }

    pub fn vacuum(layout: &ModeLayout) -> Self {
        Self::fock(layout, &[]).expect("vacuum is always representable")
    }

    /// Diagonal state with the given single-mode populations on `mode`
    /// (vacuum elsewhere). Populations are renormalized.
    pub fn diagonal(layout: &ModeLayout, mode: &str, populations: &[f64]) -> Result<Self> {
        let dim = layout.mode_dim(mode)?;
        if populations.len() > dim {
            return Err(Error::InvalidArgument(format!(
                "{} populations for mode `{mode}` of dimension {dim}",
                populations.len()
            )));
        }
        if populations.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidArgument("populations must be finite and >= 0".into()));
        }
        let total: f64 = populations.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("populations sum to zero".into()));
        }
        let mut local = CMatrix::zeros(dim, dim);
        for (n, p) in populations.iter().enumerate() {
            local[(n, n)] = C64::new(p / total, 0.0);
        }
        Self::from_local(layout, mode, &local)
    }

    /// Thermal state of mean occupation `n_bar` on `mode`, truncated and
    /// renormalized.
    pub fn thermal(layout: &ModeLayout, mode: &str, n_bar: f64) -> Result<Self> {
        if !(n_bar >= 0.0) {
            return Err(Error::InvalidArgument(format!("thermal occupation {n_bar} < 0")));
        }
        let dim = layout.mode_dim(mode)?;
        let ratio = n_bar / (1.0 + n_bar);
        let pops: Vec<f64> = (0..dim).map(|n| ratio.powi(n as i32)).collect();
        Self::diagonal(layout, mode, &pops)
    }

    /// `local` on `mode` tensored with vacuum on every other mode.
    fn from_local(layout: &ModeLayout, mode: &str, local: &CMatrix) -> Result<Self> {
        let k = layout.index_of(mode)?;
        let mut m = CMatrix::identity(1, 1);
        for (j, mj) in layout.modes().iter().enumerate() {
            m = if j == k {
                m.kronecker(local)
            } else {
                let mut vac = CMatrix::zeros(mj.dim, mj.dim);
                vac[(0, 0)] = ONE;
                m.kronecker(&vac)
            };
        }
        Self::new(layout.clone(), m)
    }

    /// `self ⊗ other` on the concatenated layout.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<Self> {
        let layout = self.layout.tensor(&other.layout)?;
        Ok(Self { layout, matrix: self.matrix.kronecker(&other.matrix) })
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)[0]
    }

    /// Population of basis level `level` of `mode`.
    pub fn level_population(&self, mode: &str, level: usize) -> Result<f64> {
        let k = self.layout.index_of(mode)?;
        Ok((0..self.dim())
            .filter(|&i| self.layout.digits(i)[k] == level)
            .map(|i| self.matrix[(i, i)].re)
            .sum())
    }

    /// Population of the highest retained Fock level of every mode with
    /// more than two levels.
    pub fn truncation_populations(&self) -> Vec<(String, f64)> {
        self.layout
            .modes()
            .iter()
            .filter(|m| m.dim > 2)
            .map(|m| {
                let p = self.level_population(&m.name, m.dim - 1).unwrap_or(0.0);
                (m.name.clone(), p)
            })
            .collect()
    }

    pub fn validate(&self, herm_tol: f64, trace_tol: f64, pos_tol: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if !(herm <= herm_tol) {
            return Err(Error::InvalidState(format!("hermiticity error {herm:.3e} > {herm_tol:.1e}")));
        }
        let tr = self.trace();
        if !((tr.re - 1.0).abs() <= trace_tol && tr.im.abs() <= trace_tol) {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1 by more than {trace_tol:.1e}")));
        }
        let min_ev = self.min_eigenvalue();
        if !(min_ev >= pos_tol) {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min_ev:.3e} < {pos_tol:.1e}")));
        }
        Ok(())
    }

    /// Dense `(rows of [re, im])` view for JSON export.
    pub fn to_pairs(&self) -> Vec<Vec<[f64; 2]>> {
        matrix_to_pairs(&self.matrix)
    }
}

pub fn matrix_to_pairs(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("matrix rows must form a square array".into()));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

/// Coherent state `|alpha>` on `mode`, vacuum elsewhere, renormalized after
/// truncation. Requires `|alpha|^2 <= dim/4`.
pub fn coherent_state(layout: &ModeLayout, mode: &str, amplitude: C64) -> Result<DensityMatrix> {
    let dim = layout.mode_dim(mode)?;
    if amplitude.norm_sqr() > dim as f64 / 4.0 {
        return Err(Error::TruncationTooSmall { amplitude: amplitude.norm(), dim });
    }
    let local = coherent_vector(dim, amplitude);
    let k = layout.index_of(mode)?;
    let mut psi = DVector::from_element(1, ONE);
    for (j, mj) in layout.modes().iter().enumerate() {
        psi = if j == k {
            psi.kronecker(&local)
        } else {
            let mut vac = DVector::zeros(mj.dim);
            vac[0] = ONE;
            psi.kronecker(&vac)
        };
    }
    DensityMatrix::pure(layout, &psi)
}

/// Truncated (unnormalized) Fock amplitudes `e^{-|a|^2/2} a^n / sqrt(n!)`.
pub(crate) fn coherent_vector(dim: usize, amplitude: C64) -> DVector<C64> {
    let mut v = DVector::zeros(dim);
    let mut c = C64::new((-amplitude.norm_sqr() / 2.0).exp(), 0.0);
    v[0] = c;
    for n in 1..dim {
        c = c * amplitude / (n as f64).sqrt();
        v[n] = c;
    }
    v
}

/// Reduced state on `kept` modes.
pub fn partial_trace(rho: &DensityMatrix, kept: &[&str]) -> Result<DensityMatrix> {
    let full = rho.layout();
    let sub = full.sub_layout(kept)?;
    let keep_mask: Vec<bool> = full
        .modes()
        .iter()
        .map(|m| kept.contains(&m.name.as_str()))
        .collect();
    let d = full.dim();
    let mut kept_idx = vec![0usize; d];
    let mut traced_idx = vec![0usize; d];
    for i in 0..d {
        let digits = full.digits(i);
        let (mut a, mut b) = (0, 0);
        for (k, m) in full.modes().iter().enumerate() {
            if keep_mask[k] {
                a = a * m.dim + digits[k];
            } else {
                b = b * m.dim + digits[k];
            }
        }
        kept_idx[i] = a;
        traced_idx[i] = b;
    }
    let ds = sub.dim();
    let mut out = CMatrix::zeros(ds, ds);
    for i in 0..d {
        for j in 0..d {
            if traced_idx[i] == traced_idx[j] {
                out[(kept_idx[i], kept_idx[j])] += rho.matrix()[(i, j)];
            }
        }
    }
    DensityMatrix::from_matrix_unchecked(sub, out)
}

/// `Tr(rho O)`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64> {
    rho.layout().check_same(op.layout())?;
    Ok(trace_product(rho.matrix(), op.matrix()))
}

/// `Tr(A B)` without forming the product.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Principal square root of a positive semidefinite Hermitian matrix.
fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    let s = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
    );
    v * CMatrix::from_diagonal(&s) * v.adjoint()
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    rho.layout().check_same(sigma.layout())?;
    let sr = psd_sqrt(rho.matrix());
    let inner = &sr * sigma.matrix() * &sr;
    let h = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
    let tr: f64 = SymmetricEigen::new(h)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok((tr * tr).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn lowering_dim_two() {
        let l = ModeLayout::single("a", 2).unwrap();
        let a = annihilation(&l, "a").unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert_eq!(a.matrix(), &expected);
    }

    #[test]
    fn lowering_dim_three_entry() {
        let l = ModeLayout::single("a", 3).unwrap();
        let a = annihilation(&l, "a").unwrap();
        assert_abs_diff_eq!(a.matrix()[(1, 2)].re, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn ladder_entries_match_sqrt_n() {
        let l = ModeLayout::detector(4, 3).unwrap();
        let b = annihilation(&l, BUFFER).unwrap();
        for i in 0..l.dim() {
            for j in 0..l.dim() {
                let (di, dj) = (l.digits(i), l.digits(j));
                let expected = if di[1] == dj[1] && di[2] == dj[2] && dj[0] >= 1 && di[0] == dj[0] - 1 {
                    (dj[0] as f64).sqrt()
                } else {
                    0.0
                };
                assert_eq!(b.matrix()[(i, j)], C64::new(expected, 0.0));
            }
        }
    }

    #[test]
    fn disjoint_modes_commute_exactly() {
        let l = ModeLayout::detector(3, 3).unwrap();
        let b = annihilation(&l, BUFFER).unwrap();
        let w = annihilation(&l, WASTE).unwrap();
        let s = annihilation(&l, QUBIT).unwrap();
        assert_eq!(b.commutator(&w).unwrap().max_abs(), 0.0);
        assert_eq!(b.commutator(&s.adjoint()).unwrap().max_abs(), 0.0);
        assert_eq!(w.adjoint().commutator(&s).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn canonical_commutator_below_top_level() {
        for dim in 4..8 {
            let l = ModeLayout::single("a", dim).unwrap();
            let a = annihilation(&l, "a").unwrap();
            let c = a.commutator(&a.adjoint()).unwrap();
            let block = c.matrix().view((0, 0), (dim - 1, dim - 1)).into_owned();
            assert_abs_diff_eq!(max_abs(&(block - CMatrix::identity(dim - 1, dim - 1))), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unknown_mode_rejected() {
        let l = ModeLayout::detector(3, 3).unwrap();
        assert!(matches!(annihilation(&l, "pump"), Err(Error::UnknownMode(_))));
    }

    #[test]
    fn layout_rejects_bad_dims() {
        assert!(ModeLayout::new([("a", 1)]).is_err());
        assert!(ModeLayout::new([(QUBIT, 3)]).is_err());
        assert!(ModeLayout::new([("a", 2), ("a", 3)]).is_err());
    }

    #[test]
    fn coherent_zero_is_vacuum() {
        let l = ModeLayout::detector(4, 3).unwrap();
        let rho = coherent_state(&l, BUFFER, C64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(max_abs(&(rho.matrix() - DensityMatrix::vacuum(&l).matrix())), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coherent_photon_number_poisson() {
        // Poisson oracle: sum_n n e^{-x} x^n / n! over the retained levels,
        // renormalized by the retained weight.
        let x: f64 = 0.25;
        let dim = 8;
        let mut w = 0.0;
        let mut nw = 0.0;
        let mut term = (-x).exp();
        for n in 0..dim {
            if n > 0 {
                term *= x / n as f64;
            }
            w += term;
            nw += n as f64 * term;
        }
        let oracle = nw / w;
        let l = ModeLayout::single("a", dim).unwrap();
        let rho = coherent_state(&l, "a", C64::new(0.5, 0.0)).unwrap();
        let n = expectation(&rho, &number(&l, "a").unwrap()).unwrap();
        assert_abs_diff_eq!(n.re, oracle, epsilon = 1e-12);
        assert!((n.re - 0.25).abs() < 1e-6);
        assert_abs_diff_eq!(rho.purity(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn coherent_mean_field() {
        let l = ModeLayout::single("a", 12).unwrap();
        let beta = C64::new(0.6, -0.8);
        let rho = coherent_state(&l, "a", beta).unwrap();
        let a = expectation(&rho, &annihilation(&l, "a").unwrap()).unwrap();
        assert!((a - beta).norm() < 1e-6);
    }

    #[test]
    fn coherent_guard() {
        let l = ModeLayout::single("a", 4).unwrap();
        assert!(matches!(
            coherent_state(&l, "a", C64::new(1.1, 0.0)),
            Err(Error::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn partial_trace_product_state() {
        let la = ModeLayout::single("a", 3).unwrap();
        let lb = ModeLayout::single("b", 2).unwrap();
        let ra = DensityMatrix::thermal(&la, "a", 0.7).unwrap();
        let rb = coherent_state(&ModeLayout::single("b", 2).unwrap(), "b", C64::new(0.3, 0.1)).unwrap();
        let _ = lb;
        let joint = ra.tensor(&rb).unwrap();
        let back = partial_trace(&joint, &["a"]).unwrap();
        assert_abs_diff_eq!(max_abs(&(back.matrix() - ra.matrix())), 0.0, epsilon = 1e-15);
        let back_b = partial_trace(&joint, &["b"]).unwrap();
        assert_abs_diff_eq!(max_abs(&(back_b.matrix() - rb.matrix())), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn partial_trace_bell_pair() {
        let l = ModeLayout::new([("a", 2), ("b", 2)]).unwrap();
        let s = 0.5f64.sqrt();
        let psi = DVector::from_vec(vec![C64::new(s, 0.0), ZERO, ZERO, C64::new(s, 0.0)]);
        let rho = DensityMatrix::pure(&l, &psi).unwrap();
        let red = partial_trace(&rho, &["b"]).unwrap();
        let half = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
        assert!(max_abs(&(red.matrix() - half)) < 1e-12);
    }

    #[test]
    fn partial_trace_errors() {
        let l = ModeLayout::detector(2, 2).unwrap();
        let rho = DensityMatrix::vacuum(&l);
        assert!(partial_trace(&rho, &[]).is_err());
        assert!(partial_trace(&rho, &["nope"]).is_err());
    }

    #[test]
    fn expectation_basics() {
        let l = ModeLayout::detector(3, 3).unwrap();
        let vac = DensityMatrix::vacuum(&l);
        assert_eq!(expectation(&vac, &number(&l, BUFFER).unwrap()).unwrap(), ZERO);
        let id = Operator::identity(&l);
        assert_abs_diff_eq!(expectation(&vac, &id).unwrap().re, 1.0, epsilon = 1e-9);
        let other = ModeLayout::detector(3, 4).unwrap();
        assert!(expectation(&vac, &Operator::identity(&other)).is_err());
    }

    #[test]
    fn fock_state_and_truncation_diagnostic() {
        let l = ModeLayout::detector(3, 3).unwrap();
        let rho = DensityMatrix::fock(&l, &[(BUFFER, 2), (QUBIT, 1)]).unwrap();
        assert_abs_diff_eq!(rho.level_population(QUBIT, 1).unwrap(), 1.0);
        let diag = rho.truncation_populations();
        assert_eq!(diag[0], (BUFFER.to_string(), 1.0));
        assert_eq!(diag[1], (WASTE.to_string(), 0.0));
    }

    #[test]
    fn fidelity_pure_and_mixed() {
        let l = ModeLayout::single("a", 4).unwrap();
        let one = DensityMatrix::fock(&l, &[("a", 1)]).unwrap();
        let th = DensityMatrix::thermal(&l, "a", 0.5).unwrap();
        assert_abs_diff_eq!(fidelity(&one, &one).unwrap(), 1.0, epsilon = 1e-9);
        let p1 = th.matrix()[(1, 1)].re;
        assert_abs_diff_eq!(fidelity(&th, &one).unwrap(), p1, epsilon = 1e-9);
        assert_abs_diff_eq!(fidelity(&th, &th).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn validation_rejects_non_states() {
        let l = ModeLayout::single("a", 2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[C64::new(1.2, 0.0), ZERO, ZERO, C64::new(-0.2, 0.0)]);
        assert!(DensityMatrix::new(l.clone(), m).is_err());
        let m = CMatrix::from_row_slice(2, 2, &[C64::new(0.5, 0.0), ONE, ZERO, C64::new(0.5, 0.0)]);
        assert!(DensityMatrix::new(l, m).is_err());
    }
}
