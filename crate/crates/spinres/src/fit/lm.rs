//! Bounded Levenberg–Marquardt over a generic residual function.
//!
//! The step solves (JᵀJ + λ·diag(JᵀJ))δ = −Jᵀr on the free parameters,
//! with J from central differences. Bounds are handled by projecting each
//! candidate into the box and freezing parameters that sit on a bound the
//! gradient is pushing through. Only accepted steps enter the cost history,
//! so it is monotone by construction.

use std::fmt;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::CavityError;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    Invalid(String),
    #[error("model produced a non-finite residual at parameters {at:?}")]
    NonFinite { at: Vec<f64> },
    #[error("no dip found: peak-to-peak {peak_to_peak:.3e} is below the detection floor {floor:.3e}")]
    DipNotFound { peak_to_peak: f64, floor: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Trace(#[from] CavityError),
}

/// Which model a fit result refers to; serialized into reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    BareReflection,
    CoupledReflection,
    DressedCrossing,
    T1Recovery,
    T2Stretched,
    LorentzianDensity,
    #[serde(untagged)]
    Custom(String),
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::BareReflection => write!(f, "bare-reflection"),
            ModelId::CoupledReflection => write!(f, "coupled-reflection"),
            ModelId::DressedCrossing => write!(f, "dressed-crossing"),
            ModelId::T1Recovery => write!(f, "t1-recovery"),
            ModelId::T2Stretched => write!(f, "t2-stretched"),
            ModelId::LorentzianDensity => write!(f, "lorentzian-density"),
            ModelId::Custom(s) => write!(f, "{s}"),
        }
    }
}

/// One fit parameter: starting value, box bounds and an optional hold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub initial: f64,
    #[serde(default = "neg_inf")]
    pub lower: f64,
    #[serde(default = "pos_inf")]
    pub upper: f64,
    #[serde(default)]
    pub fixed: bool,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

impl ParamSpec {
    pub fn free(name: impl Into<String>, initial: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            fixed: false,
        }
    }

    pub fn bounded(name: impl Into<String>, initial: f64, lower: f64, upper: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial,
            lower,
            upper,
            fixed: false,
        }
    }

    pub fn fixed_at(name: impl Into<String>, value: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial: value,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            fixed: true,
        }
    }
}

/// Residual weighting: uniform, or per-point standard deviations that the
/// residuals are divided by.
#[derive(Debug, Clone, Default)]
pub enum Weighting {
    #[default]
    Uniform,
    Sigma(Vec<f64>),
}

type ResidualFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) -> Result<(), FitError> + 'a>;

/// A residual function r(x) of length `n_residuals` plus parameter metadata.
pub struct FitProblem<'a> {
    pub model: ModelId,
    pub params: Vec<ParamSpec>,
    pub weighting: Weighting,
    n_residuals: usize,
    residuals: ResidualFn<'a>,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        model: ModelId,
        params: Vec<ParamSpec>,
        n_residuals: usize,
        residuals: impl Fn(&[f64], &mut [f64]) -> Result<(), FitError> + 'a,
    ) -> Self {
        FitProblem {
            model,
            params,
            weighting: Weighting::Uniform,
            n_residuals,
            residuals: Box::new(residuals),
        }
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn n_residuals(&self) -> usize {
        self.n_residuals
    }

    fn validate(&self) -> Result<(), FitError> {
        let bad = |msg: String| Err(FitError::Invalid(msg));
        if self.params.is_empty() {
            return bad("no parameters".into());
        }
        if self.n_residuals == 0 {
            return bad("empty dataset".into());
        }
        for (i, p) in self.params.iter().enumerate() {
            if p.name.is_empty() {
                return bad(format!("parameter {i} has no name"));
            }
            if !p.initial.is_finite() {
                return bad(format!("{}: initial value {} is not finite", p.name, p.initial));
            }
            if !(p.lower <= p.initial && p.initial <= p.upper) {
                return bad(format!(
                    "{}: initial {} outside bounds [{}, {}]",
                    p.name, p.initial, p.lower, p.upper
                ));
            }
            if !p.fixed && !(p.lower < p.upper) {
                return bad(format!("{}: empty bound interval", p.name));
            }
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("duplicate parameter name {}", p.name));
            }
        }
        if self.params.iter().all(|p| p.fixed) {
            return bad("every parameter is fixed".into());
        }
        if let Weighting::Sigma(sig) = &self.weighting {
            if sig.len() != self.n_residuals {
                return bad(format!(
                    "{} weights for {} residuals",
                    sig.len(),
                    self.n_residuals
                ));
            }
            if sig.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad("weights must be finite and positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    /// Relative step or relative cost change went below threshold.
    Converged,
    /// Stopped at the iteration cap.
    MaxIterations,
    /// Normal matrix singular at the solution; uncertainties come from a
    /// pseudo-inverse and at least one direction is unconstrained.
    Degenerate,
}

impl fmt::Display for Convergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Convergence::Converged => write!(f, "converged"),
            Convergence::MaxIterations => write!(f, "max-iterations"),
            Convergence::Degenerate => write!(f, "degenerate"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelId,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// 1σ uncertainties from (JᵀJ)⁻¹·s², s² = RSS/(n−p); zero for fixed
    /// parameters.
    pub sigmas: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub convergence: Convergence,
    /// Correlation matrix over all parameters; unit diagonal, fixed
    /// parameters uncorrelated.
    pub correlation: Vec<Vec<f64>>,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.sigmas[i])
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.correlation[i][j] * self.sigmas[i] * self.sigmas[j]
    }
}

pub const MAX_ITERATIONS: usize = 500;
const STEP_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-12;
const FD_REL_STEP: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e14;

/// Length scale of a parameter, for difference steps and step-size checks.
fn param_scale(spec: &ParamSpec, x: f64) -> f64 {
    let ax = x.abs();
    if ax > 0.0 {
        return ax;
    }
    let span = spec.upper - spec.lower;
    if span.is_finite() && span > 0.0 {
        1e-3 * span
    } else {
        1.0
    }
}

pub fn least_squares(problem: &FitProblem) -> Result<FitResult, FitError> {
    problem.validate()?;
    let n = problem.n_residuals;
    let specs = &problem.params;
    let free: Vec<usize> = (0..specs.len())
        .filter(|&j| !specs[j].fixed)
        .collect();
    let p = free.len();

    let eval = |x: &[f64], buf: &mut [f64]| -> Result<f64, FitError> {
        (problem.residuals)(x, buf)?;
        if let Weighting::Sigma(sig) = &problem.weighting {
            for (r, s) in buf.iter_mut().zip(sig) {
                *r /= *s;
            }
        }
        let mut cost = 0.0;
        for r in buf.iter() {
            if !r.is_finite() {
                return Err(FitError::NonFinite { at: x.to_vec() });
            }
            cost += r * r;
        }
        Ok(cost)
    };

    // weighted Jacobian by central differences, one-sided at the bounds
    let jacobian = |x: &mut Vec<f64>| -> Result<DMatrix<f64>, FitError> {
        let mut hi_buf = vec![0.0; n];
        let mut lo_buf = vec![0.0; n];
        let mut jac = DMatrix::zeros(n, p);
        for (col, &j) in free.iter().enumerate() {
            let s = &specs[j];
            let h = FD_REL_STEP * param_scale(s, x[j]);
            let hi = (x[j] + h).min(s.upper);
            let lo = (x[j] - h).max(s.lower);
            if !(hi > lo) {
                continue;
            }
            let keep = x[j];
            x[j] = hi;
            eval(x, &mut hi_buf)?;
            x[j] = lo;
            eval(x, &mut lo_buf)?;
            x[j] = keep;
            let inv = 1.0 / (hi - lo);
            for i in 0..n {
                jac[(i, col)] = (hi_buf[i] - lo_buf[i]) * inv;
            }
        }
        Ok(jac)
    };

    let mut x: Vec<f64> = specs
        .iter()
        .map(|s| s.initial.clamp(s.lower, s.upper))
        .collect();
    let mut buf = vec![0.0; n];
    let mut cost = eval(&x, &mut buf)?;
    let mut resid = DVector::from_column_slice(&buf);
    let mut history = vec![cost];
    let mut lambda = 1e-3_f64;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let jac = jacobian(&mut x)?;
        let grad = jac.transpose() * &resid;

        // freeze parameters pinned on a bound the gradient pushes through
        let active: Vec<usize> = (0..p)
            .filter(|&k| {
                let j = free[k];
                let s = &specs[j];
                let pinned_low = x[j] <= s.lower && grad[k] > 0.0;
                let pinned_high = x[j] >= s.upper && grad[k] < 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();
        if active.is_empty() {
            converged = true;
            break;
        }

        let ja = jac.select_columns(active.iter());
        let aa = ja.transpose() * &ja;
        let rhs = -(ja.transpose() * &resid);

        let mut accepted = false;
        let mut rel_step = f64::INFINITY;
        let mut rel_drop = f64::INFINITY;
        while lambda <= LAMBDA_MAX {
            let mut m = aa.clone();
            for k in 0..active.len() {
                let d = aa[(k, k)];
                m[(k, k)] += lambda * if d > 0.0 { d } else { 1.0 };
            }
            let step = match m.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => match m.lu().solve(&rhs) {
                    Some(sol) => sol,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let mut cand = x.clone();
            for (k, &ak) in active.iter().enumerate() {
                let j = free[ak];
                cand[j] = (x[j] + step[k]).clamp(specs[j].lower, specs[j].upper);
            }
            let cand_cost = eval(&cand, &mut buf)?;
            if cand_cost < cost {
                rel_step = active
                    .iter()
                    .map(|&ak| {
                        let j = free[ak];
                        (cand[j] - x[j]).abs() / param_scale(&specs[j], x[j])
                    })
                    .fold(0.0, f64::max);
                rel_drop = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
                x = cand;
                cost = cand_cost;
                resid = DVector::from_column_slice(&buf);
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no damping produces a downhill step: stationary
            converged = true;
            break;
        }
        if rel_step < STEP_TOL || rel_drop < COST_TOL {
            converged = true;
            break;
        }
    }

    // covariance over the free parameters at the solution
    let jac = jacobian(&mut x)?;
    let normal = jac.transpose() * &jac;
    let dof = n.saturating_sub(p).max(1) as f64;
    let s2 = cost / dof;
    let mut degenerate = false;
    let cov = match normal.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            degenerate = true;
            let svd = SVD::new(normal, true, true);
            let cutoff = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            svd.pseudo_inverse(cutoff)
                .unwrap_or_else(|_| DMatrix::zeros(p, p))
        }
    };

    let full = specs.len();
    let mut sigmas = vec![0.0; full];
    for (k, &j) in free.iter().enumerate() {
        sigmas[j] = (cov[(k, k)] * s2).max(0.0).sqrt();
    }
    let mut correlation = vec![vec![0.0; full]; full];
    for (j, row) in correlation.iter_mut().enumerate() {
        row[j] = 1.0;
    }
    for (k, &j) in free.iter().enumerate() {
        for (l, &j2) in free.iter().enumerate().skip(k + 1) {
            let denom = sigmas[j] * sigmas[j2];
            let rho = if denom > 0.0 {
                ((cov[(k, l)] * s2) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            correlation[j][j2] = rho;
            correlation[j2][j] = rho;
        }
    }

    let convergence = if degenerate {
        Convergence::Degenerate
    } else if converged {
        Convergence::Converged
    } else {
        Convergence::MaxIterations
    };

    Ok(FitResult {
        model: problem.model.clone(),
        names: specs.iter().map(|s| s.name.clone()).collect(),
        values: x,
        sigmas,
        rss: cost,
        iterations,
        convergence,
        correlation,
        cost_history: history,
    })
}
