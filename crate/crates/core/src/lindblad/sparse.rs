//! Row-sparse kernels used by the integrator. Every model operator here is
//! a product of ladder operators, so each has at most a few nonzeros per
//! row; the dense products would dominate the run time.

use crate::hilbert::{CMatrix, C64, ZERO};

#[derive(Clone, Debug)]
pub(crate) struct SparseOp {
    dim: usize,
    /// `(row, col, value)`, exact zeros dropped.
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let dim = m.nrows();
        let mut entries = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                let v = m[(i, j)];
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        Self { dim, entries }
    }

    /// `y += c · (self · x)`, all matrices column-major.
    pub fn mul_acc(&self, c: C64, x: &[C64], y: &mut [C64]) {
        let d = self.dim;
        for &(i, k, v) in &self.entries {
            let cv = c * v;
            for j in 0..d {
                y[i + j * d] += cv * x[k + j * d];
            }
        }
    }

    /// `y += c · (x · self†)`.
    pub fn mul_adjoint_right_acc(&self, c: C64, x: &[C64], y: &mut [C64]) {
        let d = self.dim;
        for &(j, k, v) in &self.entries {
            let cv = c * v.conj();
            let (src, dst) = (k * d, j * d);
            for i in 0..d {
                y[dst + i] += cv * x[src + i];
            }
        }
    }
}

/// Dense `out = -i (y - y†)`.
pub(crate) fn anti_hermitian_part(y: &[C64], out: &mut [C64], d: usize) {
    let minus_i = C64::new(0.0, -1.0);
    for j in 0..d {
        for i in 0..d {
            out[i + j * d] = minus_i * (y[i + j * d] - y[j + i * d].conj());
        }
    }
}
