//! Small dense Levenberg–Marquardt solver with a finite-difference Jacobian.
//!
//! Steps are only accepted when they lower the cost, so the final residual
//! never exceeds the initial one.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Largest cosine between the residual and any Jacobian column.
    pub gradient_tolerance: f64,
    /// Relative parameter step below which the search stops.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmError {
    /// A Jacobian column vanished, or JᵀJ could not be factored.
    Singular,
    /// The residual function failed at the initial point.
    BadStart,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub initial_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    pub fn residual_norm(&self) -> f64 {
        self.residuals.norm()
    }

    /// `s² (JᵀJ)⁻¹` with `s² = ‖r‖²/(m − n)`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let (m, n) = self.jacobian.shape();
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = jtj.cholesky()?.inverse();
        let dof = m.saturating_sub(n).max(1) as f64;
        let s2 = self.residuals.norm_squared() / dof;
        Some(inv * s2)
    }
}

fn jacobian<F>(f: &F, x: &DVector<f64>, r0: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut j = DMatrix::zeros(r0.len(), x.len());
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let rp = f(&xp)?;
        let rm = f(&xm)?;
        j.set_column(k, &((rp - rm) / (2.0 * h)));
    }
    Some(j)
}

fn gradient_cosine(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = j.transpose() * r;
    (0..j.ncols())
        .map(|k| {
            let cn = j.column(k).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[k].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

pub fn minimize<F>(f: F, x0: DVector<f64>, opts: &LmOptions) -> Result<LmOutcome, LmError>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = x0;
    let mut r = f(&x).ok_or(LmError::BadStart)?;
    let initial_norm = r.norm();
    let mut cost = r.norm_squared();
    let mut j = jacobian(&f, &x, &r).ok_or(LmError::BadStart)?;
    if (0..j.ncols()).any(|k| j.column(k).norm() == 0.0) {
        return Err(LmError::Singular);
    }
    let mut jtj = j.transpose() * &j;
    let mut lambda = 1e-3 * jtj.diagonal().max();
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = gradient_cosine(&j, &r) <= opts.gradient_tolerance || cost == 0.0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let g = j.transpose() * &r;
        let mut damped = jtj.clone();
        for k in 0..damped.nrows() {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&g));
        let candidate = &x + &step;
        let trial = f(&candidate).filter(|r| r.iter().all(|v| v.is_finite()));
        let predicted = {
            let mut scaled = step.clone();
            for k in 0..scaled.len() {
                scaled[k] *= lambda * jtj[(k, k)];
            }
            step.dot(&(scaled - &g))
        };
        match trial {
            Some(rt) if rt.norm_squared() < cost => {
                let new_cost = rt.norm_squared();
                let rho = if predicted > 0.0 {
                    (cost - new_cost) / predicted
                } else {
                    1.0
                };
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let small_step = step.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance);
                x = candidate;
                r = rt;
                cost = new_cost;
                j = match jacobian(&f, &x, &r) {
                    Some(j) => j,
                    None => break,
                };
                jtj = j.transpose() * &j;
                converged = small_step
                    || cost == 0.0
                    || gradient_cosine(&j, &r) <= opts.gradient_tolerance;
            }
            _ => {
                if step.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance) {
                    converged = true;
                    break;
                }
                lambda *= nu;
                nu *= 2.0;
            }
        }
    }

    Ok(LmOutcome {
        params: x,
        residuals: r,
        jacobian: j,
        initial_norm,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &DVector<f64>| Some(DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]));
        let out = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.params[0] - 1.0).abs() < 1e-8);
        assert!((out.params[1] - 1.0).abs() < 1e-8);
        assert!(out.residual_norm() <= out.initial_norm);
    }

    #[test]
    fn exponential_fit_and_covariance() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.4 * t).exp()).collect();
        let f = |p: &DVector<f64>| {
            Some(DVector::from_iterator(
                t.len(),
                t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            ))
        };
        let out = minimize(f, DVector::from_vec(vec![1.0, 1.0]), &LmOptions::default()).unwrap();
        assert!((out.params[0] - 3.0).abs() < 1e-9);
        assert!((out.params[1] - 0.4).abs() < 1e-9);
        assert!(out.covariance().is_some());
    }

    #[test]
    fn dead_parameter_is_singular() {
        let f = |p: &DVector<f64>| Some(DVector::from_vec(vec![p[0] - 1.0, p[0] + 1.0]));
        let out = minimize(f, DVector::from_vec(vec![0.0, 5.0]), &LmOptions::default());
        assert_eq!(out.unwrap_err(), LmError::Singular);
    }
}
