use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// 1-sigma uncertainty from the residual-scaled covariance.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub model: String,
    pub params: Vec<FitParam>,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |p| p.value)
    }
}

/// A least-squares model: residuals and their Jacobian at `x`.
pub(crate) trait Model {
    fn names(&self) -> &[&'static str];
    fn residuals(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>);
}

/// Bounded Levenberg-Marquardt with box projection.
pub(crate) fn levenberg_marquardt(model: &dyn Model, name: &str, x0: &[f64], lower: &[f64], upper: &[f64]) -> Result<FitResult> {
    let p = x0.len();
    let clamp = |x: &mut DVector<f64>| {
        for i in 0..p {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = DVector::from_column_slice(x0);
    clamp(&mut x);
    let (mut r, mut j) = model.residuals(x.as_slice());
    let n = r.len();
    if n < p {
        return Err(Error::InvalidArgument(format!("{name}: {n} points cannot fix {p} parameters")));
    }
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..1000 {
        iterations = it + 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &x + &step;
            clamp(&mut trial);
            let (rt, jt2) = model.residuals(trial.as_slice());
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let moved = (&trial - &x).norm() <= 1e-15 * (x.norm() + 1e-300);
                x = trial;
                r = rt;
                j = jt2;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel < 1e-15 || moved || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: stationary to machine precision.
            converged = g.norm() <= 1e-8 * (1.0 + cost.sqrt()) || cost <= 1e-28;
            break;
        }
        if converged {
            break;
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("{name}: fit diverged")));
    }
    let dof = n.saturating_sub(p);
    let s2 = if dof > 0 { cost / dof as f64 } else { 0.0 };
    let cov = (j.transpose() * &j).try_inverse();
    let params = model
        .names()
        .iter()
        .enumerate()
        .map(|(i, nm)| FitParam {
            name: nm.to_string(),
            value: x[i],
            sigma: cov.as_ref().map_or(f64::NAN, |c| (c[(i, i)] * s2).max(0.0).sqrt()),
        })
        .collect();
    Ok(FitResult { model: name.to_string(), params, residual_rms: (cost / n as f64).sqrt(), converged, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line<'a>(&'a [(f64, f64)]);

    impl Model for Line<'_> {
        fn names(&self) -> &[&'static str] {
            &["a", "b"]
        }
        fn residuals(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
            let r = DVector::from_iterator(self.0.len(), self.0.iter().map(|(t, y)| x[0] + x[1] * t - y));
            let j = DMatrix::from_fn(self.0.len(), 2, |i, k| if k == 0 { 1.0 } else { self.0[i].0 });
            (r, j)
        }
    }

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let f = levenberg_marquardt(&Line(&pts), "line", &[0.0, 0.0], &[-10.0, -10.0], &[10.0, 10.0]).unwrap();
        assert!((f.value("a") - 2.0).abs() < 1e-10);
        assert!((f.value("b") + 0.5).abs() < 1e-10);
        assert!(f.converged);
    }

    #[test]
    fn bound_is_respected() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let f = levenberg_marquardt(&Line(&pts), "line", &[0.0, 0.0], &[-10.0, 0.0], &[10.0, 10.0]).unwrap();
        assert_eq!(f.value("b"), 0.0);
    }
}
