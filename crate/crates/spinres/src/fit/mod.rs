//! Nonlinear least squares: a bounded Levenberg–Marquardt core plus
//! ready-made fits for reflection traces, relaxation curves and
//! avoided-crossing maps.

mod crossing;
mod lm;
mod models;

pub use crossing::{fit_avoided_crossing, sweep_map, CrossingFit, CrossingLine, CrossingOptions};
pub use lm::{
    least_squares, Convergence, FitError, FitProblem, FitResult, ModelId, ParamSpec, Weighting,
    MAX_ITERATIONS,
};
pub use models::{
    fit_coupled_spectrum, fit_dressed_branches, fit_lorentzian_density, fit_resonator, fit_t1,
    fit_t2, CoupledFit, CouplingRegime, ResonatorFit,
};
