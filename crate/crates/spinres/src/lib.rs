//! Microwave reflection spectroscopy of electron-spin ensembles coupled to a
//! single-port resonator.
//!
//! The crate covers the full analysis chain for this class of experiment:
//!
//! * [`spin`] — hyperfine spin Hamiltonians, ESR transition frequencies and
//!   matrix elements versus applied static field.
//! * [`cavity`] — input-output reflection models S₁₁(ω) for the bare and
//!   spin-coupled resonator, dressed frequencies, cooperativity, and inversion
//!   of measured traces back to the spin spectral density.
//! * [`pulse`] — Bloch-equation pulse propagation, Hahn-echo ensemble
//!   simulation, and closed-form relaxation models (T₁ recovery, stretched
//!   T₂ decay).
//! * [`fit`] — damped nonlinear least squares with covariance-based
//!   uncertainties, plus ready-made fitters for every forward model.
//! * [`design`] — resonator/spin design arithmetic: vacuum field, mode
//!   volume, single-spin and ensemble coupling, spin counting, loss budgets.
//! * [`io`] — trace/map file parsing, fit reports, and run manifests used by
//!   the `spinres` command-line tool.
//!
//! All rates and frequencies in public interfaces are ordinary frequencies in
//! Hz (cycles per second, the "/2π" convention). Angular frequencies appear
//! only inside evaluators.

pub mod cavity;
pub mod cli;
pub mod constants;
pub mod design;
pub mod fit;
pub mod io;
pub mod par;
pub mod pulse;
pub mod quad;
pub mod spin;

pub use num_complex::Complex64;
