//! Damped least-squares recovery of coherence parameters from sweeps.
//!
//! A [`FitProblem`] pairs a sweep with one of the three closed-form models.
//! The sweep's normalized photoluminescence is flipped into contrast
//! (`y = 1 - mean`, same standard errors) so every model is fitted in its
//! contrast-positive form with free amplitude and offset.

mod guess;
pub mod lm;
mod report;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coherence::{
    check_hierarchy, hahn_echo_signal, rabi_signal, t1_signal, CoherenceHierarchy, EchoParams, HierarchyViolation,
    RabiParams, T1Params,
};
use crate::pulse::SequenceKind;
use crate::sim::SweepResult;

pub use guess::initial_guess;
pub use lm::LmSettings;
pub use report::ReportError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points for {free} free parameters, got {got}")]
    TooFewPoints { needed: usize, free: usize, got: usize },
    #[error("parameter `{0}`: bounds are not well ordered")]
    BadBounds(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}`: value {value} lies outside [{lower}, {upper}]")]
    OutOfBounds { name: String, value: f64, lower: f64, upper: f64 },
    #[error("data are flat; no initial guess possible")]
    FlatData,
    #[error("sweep of kind {0} cannot be fitted")]
    UnsupportedData(SequenceKind),
    #[error("no parameter is free")]
    NothingFree,
    #[error("singular normal matrix (condition number {condition:.3e})")]
    SingularNormalMatrix { condition: f64 },
    #[error("fit did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<FitResult>),
    #[error("expected a {expected} fit, got {got}")]
    WrongModel { expected: FitModel, got: FitModel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitModel {
    Rabi,
    T1,
    HahnEcho,
}

impl std::fmt::Display for FitModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::Rabi => "Rabi",
            FitModel::T1 => "T1",
            FitModel::HahnEcho => "HahnEcho",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rabi" => Some(FitModel::Rabi),
            "t1" => Some(FitModel::T1),
            "hahnecho" | "echo" | "hahn-echo" | "hahn_echo" => Some(FitModel::HahnEcho),
            _ => None,
        }
    }

    pub fn for_kind(kind: SequenceKind) -> Option<Self> {
        match kind {
            SequenceKind::Rabi => Some(FitModel::Rabi),
            SequenceKind::T1 => Some(FitModel::T1),
            SequenceKind::HahnEcho => Some(FitModel::HahnEcho),
            SequenceKind::Odmr => None,
        }
    }

    /// Parameter names in vector order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FitModel::Rabi => &["rabi_freq_mhz", "detuning_mhz", "t2_star_us", "amplitude", "offset"],
            FitModel::T1 => &["t1_ms", "amplitude", "offset"],
            FitModel::HahnEcho => &["t2_us", "n", "k", "f_a_mhz", "f_b_mhz", "amplitude", "offset"],
        }
    }

    pub fn index_of(self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| *n == name)
    }

    fn default_bounds(self) -> Vec<(f64, f64)> {
        let inf = f64::INFINITY;
        match self {
            FitModel::Rabi => vec![(1e-9, 1e4), (-1e4, 1e4), (1e-6, 1e6), (0.0, inf), (-inf, inf)],
            FitModel::T1 => vec![(1e-9, 1e9), (-inf, inf), (-inf, inf)],
            FitModel::HahnEcho => vec![
                (1e-6, 1e6),
                (0.1, 10.0),
                (0.0, 4.0),
                (1e-9, 1e4),
                (0.0, 1e4),
                (0.0, inf),
                (-inf, inf),
            ],
        }
    }

    /// Model value at sweep abscissa `x` (Rabi: ns, T1: ms, echo: µs).
    pub fn eval(self, x: f64, p: &[f64]) -> f64 {
        match self {
            FitModel::Rabi => rabi_signal(
                x * 1e-3,
                &RabiParams {
                    rabi_freq_mhz: p[0],
                    detuning_mhz: p[1],
                    t2_star_us: p[2],
                    amplitude: p[3],
                    offset: p[4],
                },
            ),
            FitModel::T1 => t1_signal(
                x,
                &T1Params {
                    t1_ms: p[0],
                    amplitude: p[1],
                    offset: p[2],
                },
            ),
            FitModel::HahnEcho => hahn_echo_signal(
                x,
                &EchoParams {
                    t2_us: p[0],
                    n: p[1],
                    k: p[2],
                    f_a_mhz: p[3],
                    f_b_mhz: p[4],
                    amplitude: p[5],
                    offset: p[6],
                },
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    Uniform,
    InverseVariance,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Uniform => "uniform",
            WeightMode::InverseVariance => "inverse-variance",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(WeightMode::Uniform),
            "inverse-variance" => Some(WeightMode::InverseVariance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: &'static str,
    pub lower: f64,
    pub upper: f64,
    /// Held at this value when set.
    pub fixed: Option<f64>,
    /// Overrides the heuristic starting value.
    pub initial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub model: FitModel,
    pub data: SweepResult,
    pub params: Vec<Parameter>,
    pub weights: WeightMode,
    pub settings: LmSettings,
    /// Perturbed starts for the echo model.
    pub echo_starts: usize,
}

impl FitProblem {
    /// Default problem: model-specific bounds, inverse-variance weights and,
    /// for Rabi, the detuning fixed at zero.
    pub fn new(model: FitModel, data: SweepResult) -> Self {
        let params = model
            .param_names()
            .iter()
            .zip(model.default_bounds())
            .map(|(&name, (lower, upper))| Parameter {
                name,
                lower,
                upper,
                fixed: None,
                initial: None,
            })
            .collect();
        let mut p = Self {
            model,
            data,
            params,
            weights: WeightMode::InverseVariance,
            settings: LmSettings::default(),
            echo_starts: 5,
        };
        if model == FitModel::Rabi {
            p.params[1].fixed = Some(0.0);
        }
        p
    }

    /// Picks the model from the sweep's kind.
    pub fn for_sweep(data: SweepResult) -> Result<Self, FitError> {
        let kind = data.metadata.kind;
        let model = FitModel::for_kind(kind).ok_or(FitError::UnsupportedData(kind))?;
        Ok(Self::new(model, data))
    }

    fn param_mut(&mut self, name: &str) -> Result<&mut Parameter, FitError> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| FitError::UnknownParameter(name.to_string()))
    }

    pub fn fix(&mut self, name: &str, value: f64) -> Result<&mut Self, FitError> {
        self.param_mut(name)?.fixed = Some(value);
        Ok(self)
    }

    pub fn free(&mut self, name: &str) -> Result<&mut Self, FitError> {
        self.param_mut(name)?.fixed = None;
        Ok(self)
    }

    pub fn set_initial(&mut self, name: &str, value: f64) -> Result<&mut Self, FitError> {
        self.param_mut(name)?.initial = Some(value);
        Ok(self)
    }

    pub fn set_bounds(&mut self, name: &str, lower: f64, upper: f64) -> Result<&mut Self, FitError> {
        let p = self.param_mut(name)?;
        p.lower = lower;
        p.upper = upper;
        Ok(self)
    }

    pub fn n_free(&self) -> usize {
        self.params.iter().filter(|p| p.fixed.is_none()).count()
    }

    pub fn validate(&self) -> Result<(), FitError> {
        for p in &self.params {
            if !(p.lower <= p.upper) {
                return Err(FitError::BadBounds(p.name.to_string()));
            }
            for v in p.fixed.iter().chain(p.initial.iter()) {
                if !(*v >= p.lower && *v <= p.upper) {
                    return Err(FitError::OutOfBounds {
                        name: p.name.to_string(),
                        value: *v,
                        lower: p.lower,
                        upper: p.upper,
                    });
                }
            }
        }
        let free = self.n_free();
        if free == 0 {
            return Err(FitError::NothingFree);
        }
        if self.data.len() < free + 2 {
            return Err(FitError::TooFewPoints {
                needed: free + 2,
                free,
                got: self.data.len(),
            });
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<f64> {
        self.data.xs()
    }

    /// Contrast-positive ordinates.
    pub fn ys(&self) -> Vec<f64> {
        self.data.points.iter().map(|p| 1.0 - p.mean).collect()
    }

    /// The weighting actually applied: inverse-variance falls back to
    /// uniform when any standard error is zero.
    pub fn effective_weights(&self) -> WeightMode {
        match self.weights {
            WeightMode::InverseVariance if self.data.points.iter().all(|p| p.stderr > 0.0) => WeightMode::InverseVariance,
            _ => WeightMode::Uniform,
        }
    }

    fn residual_scale(&self) -> Vec<f64> {
        match self.effective_weights() {
            WeightMode::InverseVariance => self.data.points.iter().map(|p| 1.0 / p.stderr).collect(),
            WeightMode::Uniform => vec![1.0; self.data.len()],
        }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// One-sigma uncertainties; zero for fixed parameters.
    pub uncertainties: Vec<f64>,
    pub free: Vec<bool>,
    /// Row-major, over all parameters (fixed rows and columns are zero).
    pub covariance: Vec<f64>,
    pub chi_square: f64,
    pub reduced_chi_square: f64,
    pub degrees_of_freedom: usize,
    pub iterations: usize,
    pub converged: bool,
    pub weighting: WeightMode,
    /// Free parameters that finished on a bound.
    pub saturated: Vec<String>,
    /// Index of the winning start.
    pub branch: usize,
    pub data_seed: u64,
    pub n_points: usize,
    #[serde(skip)]
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.uncertainties[i])
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.names.len();
        DMatrix::from_row_slice(n, n, &self.covariance)
    }

    /// Model curve at `x`.
    pub fn curve(&self, x: f64) -> f64 {
        self.model.eval(x, &self.estimates)
    }
}

struct Branch {
    outcome: lm::LmOutcome,
    index: usize,
}

/// Fits the problem; the echo model runs several perturbed starts and keeps
/// the lowest final cost (ties go to the lowest start index).
pub fn fit(problem: &FitProblem) -> Result<FitResult, FitError> {
    problem.validate()?;
    let base = initial_guess(problem)?;
    let starts = match problem.model {
        FitModel::HahnEcho => guess::echo_starts(problem, &base, problem.echo_starts.max(1)),
        _ => vec![base],
    };

    let free_idx: Vec<usize> = (0..problem.params.len()).filter(|&i| problem.params[i].fixed.is_none()).collect();
    let lower: Vec<f64> = free_idx.iter().map(|&i| problem.params[i].lower).collect();
    let upper: Vec<f64> = free_idx.iter().map(|&i| problem.params[i].upper).collect();
    let xs = problem.xs();
    let ys = problem.ys();
    let scale = problem.residual_scale();

    let full = |free: &DVector<f64>, template: &[f64]| -> Vec<f64> {
        let mut p = template.to_vec();
        for (k, &i) in free_idx.iter().enumerate() {
            p[i] = free[k];
        }
        p
    };

    let branches: Vec<Branch> = starts
        .par_iter()
        .enumerate()
        .map(|(index, start)| {
            let residuals = |free: &DVector<f64>| {
                let p = full(free, start);
                DVector::from_iterator(
                    xs.len(),
                    xs.iter()
                        .zip(&ys)
                        .zip(&scale)
                        .map(|((&x, &y), &w)| w * (y - problem.model.eval(x, &p))),
                )
            };
            let x0 = DVector::from_iterator(free_idx.len(), free_idx.iter().map(|&i| start[i]));
            let outcome = lm::minimize(residuals, x0, &lower, &upper, &problem.settings);
            Branch { outcome, index }
        })
        .collect();

    let best = branches
        .iter()
        .filter(|b| b.outcome.converged && b.outcome.cost.is_finite())
        .min_by(|a, b| a.outcome.cost.total_cmp(&b.outcome.cost).then(a.index.cmp(&b.index)))
        .or_else(|| {
            branches
                .iter()
                .min_by(|a, b| a.outcome.cost.total_cmp(&b.outcome.cost).then(a.index.cmp(&b.index)))
        })
        .expect("at least one start");

    let estimates = full(&best.outcome.params, &starts[best.index]);
    let result = assemble(problem, &free_idx, &lower, &upper, best, estimates)?;
    if result.converged {
        Ok(result)
    } else {
        Err(FitError::NotConverged(Box::new(result)))
    }
}

/// Condition number of the column-equilibrated normal matrix and its inverse.
fn invert_normal(jtj: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    let n = jtj.nrows();
    let s: Vec<f64> = (0..n).map(|i| jtj[(i, i)].sqrt()).collect();
    if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(FitError::SingularNormalMatrix { condition: f64::INFINITY });
    }
    let c = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] / (s[i] * s[j]));
    let eig = c.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < 1e14) {
        return Err(FitError::SingularNormalMatrix { condition });
    }
    let inv_eigs = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let c_inv = &eig.eigenvectors * inv_eigs * eig.eigenvectors.transpose();
    Ok(DMatrix::from_fn(n, n, |i, j| c_inv[(i, j)] / (s[i] * s[j])))
}

fn assemble(
    problem: &FitProblem,
    free_idx: &[usize],
    lower: &[f64],
    upper: &[f64],
    best: &Branch,
    mut estimates: Vec<f64>,
) -> Result<FitResult, FitError> {
    let out = &best.outcome;
    let m = problem.data.len();
    let nf = free_idx.len();
    let dof = m - nf;
    let chi_square = 2.0 * out.cost;
    let reduced = chi_square / dof as f64;

    let jtj = out.jacobian.transpose() * &out.jacobian;
    let cov_free = invert_normal(&jtj)? * reduced;

    let np = problem.params.len();
    let mut cov = DMatrix::zeros(np, np);
    for (a, &i) in free_idx.iter().enumerate() {
        for (b, &j) in free_idx.iter().enumerate() {
            cov[(i, j)] = 0.5 * (cov_free[(a, b)] + cov_free[(b, a)]);
        }
    }

    let saturated = free_idx
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            let v = out.params[k];
            let near = |b: f64| b.is_finite() && (v - b).abs() <= 1e-9 * b.abs().max(1.0);
            near(lower[k]) || near(upper[k])
        })
        .map(|(_, &i)| problem.params[i].name.to_string())
        .collect();

    // The echo modulation is symmetric in (f_a, f_b); report f_a as the larger.
    if problem.model == FitModel::HahnEcho && estimates[4] > estimates[3] {
        estimates.swap(3, 4);
        cov.swap_rows(3, 4);
        cov.swap_columns(3, 4);
    }

    let uncertainties = (0..np).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let mut free = vec![false; np];
    for &i in free_idx {
        free[i] = true;
    }
    Ok(FitResult {
        model: problem.model,
        names: problem.model.param_names().iter().map(|s| s.to_string()).collect(),
        estimates,
        uncertainties,
        free,
        covariance: cov.transpose().as_slice().to_vec(),
        chi_square,
        reduced_chi_square: reduced,
        degrees_of_freedom: dof,
        iterations: out.iterations,
        converged: out.converged,
        weighting: problem.effective_weights(),
        saturated,
        branch: best.index,
        data_seed: problem.data.metadata.seed,
        n_points: m,
        cost_history: out.cost_history.clone(),
    })
}

/// π-pulse duration recovered from a Rabi fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiPulse {
    pub t_pi_ns: f64,
    pub sigma_ns: f64,
    /// The fit carries a nonzero detuning, so `t_π` uses the generalized
    /// Rabi frequency.
    pub off_resonance: bool,
}

/// `t_π = π / Ω'_R` from a converged Rabi fit.
pub fn extract_pi_pulse(fit: &FitResult) -> Result<PiPulse, FitError> {
    if fit.model != FitModel::Rabi {
        return Err(FitError::WrongModel {
            expected: FitModel::Rabi,
            got: fit.model,
        });
    }
    if !fit.converged {
        return Err(FitError::NotConverged(Box::new(fit.clone())));
    }
    let (f, d) = (fit.estimates[0], fit.estimates[1]);
    let g2 = f * f + d * d;
    let t = 1e3 / (2.0 * g2.sqrt());
    let grad = [-t * f / g2, -t * d / g2];
    let cov = fit.covariance_matrix();
    let var: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| grad[i] * grad[j] * cov[(i, j)]).sum();
    Ok(PiPulse {
        t_pi_ns: t,
        sigma_ns: var.max(0.0).sqrt(),
        off_resonance: d != 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyVerdict {
    pub hierarchy: CoherenceHierarchy,
    pub outcome: Result<(), HierarchyViolation>,
    /// `(T1 - T2) / σ`, both in µs.
    pub t1_t2_margin_sigma: f64,
    /// `(T2 - T2*) / σ`.
    pub t2_t2star_margin_sigma: f64,
}

impl HierarchyVerdict {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn margin(diff: f64, var: f64) -> f64 {
    if var > 0.0 {
        diff / var.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Applies `T1 >= T2 > T2*` to the point estimates of three fits.
pub fn validate_hierarchy(t1: &FitResult, echo: &FitResult, rabi: &FitResult) -> Result<HierarchyVerdict, FitError> {
    for (fit, expected) in [(t1, FitModel::T1), (echo, FitModel::HahnEcho), (rabi, FitModel::Rabi)] {
        if fit.model != expected {
            return Err(FitError::WrongModel { expected, got: fit.model });
        }
    }
    let hierarchy = CoherenceHierarchy {
        t1_ms: t1.estimates[0],
        t2_us: echo.estimates[0],
        t2_star_us: rabi.estimates[2],
    };
    let (s1, s2, s3) = (t1.uncertainties[0] * 1e3, echo.uncertainties[0], rabi.uncertainties[2]);
    Ok(HierarchyVerdict {
        hierarchy,
        outcome: check_hierarchy(&hierarchy),
        t1_t2_margin_sigma: margin(hierarchy.t1_us() - hierarchy.t2_us, s1 * s1 + s2 * s2),
        t2_t2star_margin_sigma: margin(hierarchy.t2_us - hierarchy.t2_star_us, s2 * s2 + s3 * s3),
    })
}
