use std::f64::consts::FRAC_2_PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, C64, ZERO};

/// Convention string carried in Wigner outputs.
pub const WIGNER_CONVENTION: &str = "W(alpha) = (2/pi) Tr[D(-alpha) rho D(alpha) Pi], Pi = (-1)^{a^+ a}; vacuum W(0) = 2/pi, integral over d^2 alpha = 1";

/// `<n|D(beta)|m>` for `n, m < dim` of the untruncated displacement.
fn displacement_elements(beta: C64, dim: usize) -> Vec<Vec<C64>> {
    let x = beta.norm_sqr();
    let pref = (-x / 2.0).exp();
    let mut out = vec![vec![ZERO; dim]; dim];
    for lo in 0..dim {
        for hi in lo..dim {
            let k = hi - lo;
            // Generalized Laguerre L_lo^{(k)}(x) by upward recurrence.
            let a = k as f64;
            let (mut l0, mut l1) = (1.0, 1.0 + a - x);
            let lag = if lo == 0 {
                1.0
            } else {
                for j in 1..lo {
                    let j = j as f64;
                    let l2 = ((2.0 * j + 1.0 + a - x) * l1 - (j + a) * l0) / (j + 1.0);
                    l0 = l1;
                    l1 = l2;
                }
                l1
            };
            // sqrt(lo! / hi!)
            let ratio = ((lo + 1)..=hi).fold(1.0, |acc, j| acc / (j as f64).sqrt());
            let mag = pref * ratio * lag;
            out[hi][lo] = beta.powu(k as u32) * mag;
            out[lo][hi] = (-beta.conj()).powu(k as u32) * mag;
        }
    }
    out
}

fn wigner_point(rho: &DensityMatrix, alpha: C64) -> f64 {
    let d = rho.dim();
    let dm = displacement_elements(alpha * 2.0, d);
    let r = rho.matrix();
    // D(alpha) Pi D(-alpha) = D(2 alpha) Pi, so the trace is
    // sum_mn rho_mn <n|D(2 alpha)|m> (-1)^m.
    let mut acc = ZERO;
    for m in 0..d {
        for n in 0..d {
            let parity = if m % 2 == 0 { 1.0 } else { -1.0 };
            acc += r[(m, n)] * dm[n][m] * parity;
        }
    }
    FRAC_2_PI * acc.re
}

/// Wigner function of a single-mode state at each point.
pub fn wigner(rho: &DensityMatrix, points: &[C64]) -> Result<Vec<f64>> {
    if rho.layout().modes().len() != 1 {
        return Err(Error::InvalidArgument("Wigner evaluation needs a single-mode state".into()));
    }
    if let Some(p) = points.iter().find(|p| !p.re.is_finite() || !p.im.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite grid point {p}")));
    }
    let limit = rho.dim() as f64 / 4.0;
    if let Some(p) = points.iter().find(|p| p.norm_sqr() > limit) {
        log::warn!("Wigner grid reaches |alpha|^2 = {:.3} > N_fock/4 = {limit}; values there feel the truncation", p.norm_sqr());
    }
    Ok(points.par_iter().map(|&a| wigner_point(rho, a)).collect())
}

/// Wigner function on a square grid.
#[derive(Clone, Debug, Serialize)]
pub struct WignerGrid {
    pub convention: &'static str,
    /// Axis values for both Re(alpha) and Im(alpha).
    pub axis: Vec<f64>,
    /// `values[i][j]` at `alpha = axis[j] + i axis[i]`.
    pub values: Vec<Vec<f64>>,
}

impl WignerGrid {
    pub fn new(rho: &DensityMatrix, half_width: f64, n: usize) -> Result<Self> {
        if n < 2 || !(half_width > 0.0) {
            return Err(Error::InvalidArgument(format!("grid needs n >= 2 and positive extent (got {n}, {half_width})")));
        }
        let axis: Vec<f64> = (0..n).map(|k| -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64).collect();
        let pts: Vec<C64> = axis.iter().flat_map(|&y| axis.iter().map(move |&x| C64::new(x, y))).collect();
        let flat = wigner(rho, &pts)?;
        Ok(Self { convention: WIGNER_CONVENTION, values: flat.chunks(n).map(|r| r.to_vec()).collect(), axis })
    }

    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        let n = self.axis.len();
        let h = self.axis[1] - self.axis[0];
        let w = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += w(i) * w(j) * self.values[i][j];
            }
        }
        acc * h * h
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_alpha,im_alpha,w\n");
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", self.axis[j], self.axis[i], v));
            }
        }
        s
    }
}
