//! Damped (Levenberg–Marquardt) least squares with box bounds.
//!
//! Steps solve `(JᵀJ + λ diag(JᵀJ)) δ = -Jᵀr`; a step that lowers the cost
//! is accepted and `λ` shrinks, otherwise `λ` grows and the step is retried.
//! Parameters are clamped into their bounds after every step.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub fd_relative_step: f64,
    pub initial_damping: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            fd_relative_step: 1e-6,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    /// `0.5 Σ r²` at the returned parameters.
    pub cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian of the residuals at the returned parameters.
    pub jacobian: DMatrix<f64>,
    pub residuals: DVector<f64>,
}

const MAX_DAMPING: f64 = 1e16;

/// Finite-difference step for a parameter value.
pub fn fd_step(value: f64, relative: f64) -> f64 {
    relative * value.abs().max(1e-3)
}

/// Central-difference Jacobian of `residuals` at `p`.
pub fn central_jacobian<F>(residuals: &F, p: &DVector<f64>, relative: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = residuals(p).len();
    let mut jac = DMatrix::zeros(m, p.len());
    for j in 0..p.len() {
        let h = fd_step(p[j], relative);
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[j] += h;
        minus[j] -= h;
        let d = (residuals(&plus) - residuals(&minus)) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

fn clamp(p: &mut DVector<f64>, lower: &[f64], upper: &[f64]) {
    for (i, v) in p.iter_mut().enumerate() {
        *v = v.clamp(lower[i], upper[i]);
    }
}

/// Minimizes `0.5 ‖residuals(p)‖²` from `start` within `[lower, upper]`.
pub fn minimize<F>(residuals: F, start: DVector<f64>, lower: &[f64], upper: &[f64], settings: &LmSettings) -> LmOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let cost_of = |r: &DVector<f64>| 0.5 * r.norm_squared();
    let mut p = start;
    clamp(&mut p, lower, upper);
    let mut r = residuals(&p);
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut lambda = settings.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let n = p.len();

    while iterations < settings.max_iterations {
        iterations += 1;
        let jac = central_jacobian(&residuals, &p, settings.fd_relative_step);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let diag: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(1e-30)).collect();

        let mut accepted = false;
        while lambda < MAX_DAMPING {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * diag[i];
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &p + &delta;
            clamp(&mut trial, lower, upper);
            let r_trial = residuals(&trial);
            let c_trial = cost_of(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                let step = (&trial - &p).norm();
                let rel_step = step / (p.norm() + 1e-30);
                let rel_cost = (cost - c_trial) / cost.max(1e-300);
                p = trial;
                r = r_trial;
                cost = c_trial;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_step < settings.step_tolerance || rel_cost < settings.cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping level lowers the cost: a minimum to working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let jacobian = central_jacobian(&residuals, &p, settings.fd_relative_step);
    LmOutcome {
        params: p,
        cost,
        cost_history: history,
        iterations,
        converged,
        jacobian,
        residuals: r,
    }
}
