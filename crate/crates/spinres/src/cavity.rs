//! Input-output reflection models of a single-port resonator coupled to an
//! inhomogeneously broadened spin ensemble.
//!
//! The reflection coefficient is
//!
//! S₁₁(ω) = a·e^{iφ}·[1 − κ_ext / (i(ω − ω_r) + κ_tot/2 + W(ω))]
//!
//! with the ensemble susceptibility W(ω) = g_ens²·∫ ρ(ω′)/(i(ω − ω′) + γ_hom/2) dω′.
//! Every rate is an ordinary frequency in Hz; the formula is scale-invariant
//! in that convention, so no 2π conversion appears anywhere.

use crate::quad::{self, QuadError};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, thiserror::Error)]
pub enum CavityError {
    #[error("invalid resonator parameters: {0}")]
    InvalidResonator(String),
    #[error("invalid ensemble parameters: {0}")]
    InvalidEnsemble(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("cooperativity denominators must be positive (kappa_tot = {kappa_tot}, gamma = {gamma})")]
    NonPositiveRates { kappa_tot: f64, gamma: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Single-port resonator: center frequency, internal/external decay rates
/// and the instrumental background (amplitude scale, global phase).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    pub omega_r_hz: f64,
    pub kappa_int_hz: f64,
    pub kappa_ext_hz: f64,
    #[serde(default)]
    pub phase_offset_rad: f64,
    #[serde(default = "one")]
    pub amplitude_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ResonatorParams {
    pub fn new(omega_r_hz: f64, kappa_int_hz: f64, kappa_ext_hz: f64) -> Self {
        ResonatorParams {
            omega_r_hz,
            kappa_int_hz,
            kappa_ext_hz,
            phase_offset_rad: 0.0,
            amplitude_scale: 1.0,
        }
    }

    pub fn kappa_tot_hz(&self) -> f64 {
        self.kappa_int_hz + self.kappa_ext_hz
    }

    pub fn q_int(&self) -> f64 {
        self.omega_r_hz / self.kappa_int_hz
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        let bad = |msg: String| Err(CavityError::InvalidResonator(msg));
        if !(self.omega_r_hz > 0.0) {
            return bad(format!("omega_r must be positive, got {}", self.omega_r_hz));
        }
        if !(self.kappa_int_hz > 0.0) || !(self.kappa_ext_hz > 0.0) {
            return bad(format!(
                "decay rates must be positive, got kappa_int = {}, kappa_ext = {}",
                self.kappa_int_hz, self.kappa_ext_hz
            ));
        }
        if !(self.amplitude_scale > 0.0) {
            return bad(format!(
                "amplitude_scale must be positive, got {}",
                self.amplitude_scale
            ));
        }
        Ok(())
    }
}

/// Spectral density shape of the spin line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lineshape {
    Lorentzian,
    Gaussian,
    /// Sampled density on a strictly increasing grid; treated as piecewise
    /// linear and zero outside the grid. Must be nonnegative and normalized
    /// to unit area within 1e-6.
    Tabulated {
        omega_hz: Vec<f64>,
        density: Vec<f64>,
    },
}

/// Collective spin ensemble coupled to the resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    /// Collective coupling g_ens, Hz.
    pub g_ens_hz: f64,
    /// Spin line center, Hz.
    pub omega_s_hz: f64,
    /// Inhomogeneous FWHM Γ, Hz.
    pub gamma_fwhm_hz: f64,
    pub lineshape: Lineshape,
    /// Homogeneous width folded into the susceptibility kernel; 0 by default
    /// (unresolved, absorbed into Γ).
    #[serde(default)]
    pub gamma_hom_hz: f64,
}

impl EnsembleParams {
    pub fn lorentzian(g_ens_hz: f64, omega_s_hz: f64, gamma_fwhm_hz: f64) -> Self {
        EnsembleParams {
            g_ens_hz,
            omega_s_hz,
            gamma_fwhm_hz,
            lineshape: Lineshape::Lorentzian,
            gamma_hom_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        let bad = |msg: String| Err(CavityError::InvalidEnsemble(msg));
        if self.g_ens_hz < 0.0 {
            return bad(format!("g_ens must be nonnegative, got {}", self.g_ens_hz));
        }
        if !(self.gamma_fwhm_hz > 0.0) {
            return bad(format!(
                "inhomogeneous FWHM must be positive, got {}",
                self.gamma_fwhm_hz
            ));
        }
        if self.gamma_hom_hz < 0.0 {
            return bad("homogeneous width must be nonnegative".into());
        }
        if let Lineshape::Tabulated { omega_hz, density } = &self.lineshape {
            if omega_hz.len() != density.len() || omega_hz.len() < 2 {
                return bad("tabulated density needs matching grids of length >= 2".into());
            }
            if omega_hz.windows(2).any(|w| w[1] <= w[0]) {
                return bad("tabulated grid must be strictly increasing".into());
            }
            if density.iter().any(|&d| d < 0.0 || !d.is_finite()) {
                return bad("tabulated density must be nonnegative and finite".into());
            }
            let mass = trapezoid(omega_hz, density);
            if (mass - 1.0).abs() > 1e-6 {
                return bad(format!("tabulated density must integrate to 1, got {mass}"));
            }
        }
        Ok(())
    }
}

/// Frequency-ordered complex reflection samples.
#[derive(Debug, Clone, Default)]
pub struct ComplexTrace {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
    pub metadata: TraceMetadata,
}

/// Free-form acquisition tags carried alongside a trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub field: Option<String>,
    pub power: Option<String>,
    pub temperature: Option<String>,
}

impl ComplexTrace {
    pub fn new(freqs_hz: Vec<f64>, values: Vec<Complex64>) -> Result<Self, CavityError> {
        let t = ComplexTrace {
            freqs_hz,
            values,
            metadata: TraceMetadata::default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        if self.freqs_hz.len() != self.values.len() {
            return Err(CavityError::InvalidTrace(format!(
                "{} frequencies but {} values",
                self.freqs_hz.len(),
                self.values.len()
            )));
        }
        check_freq_axis(&self.freqs_hz)
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

fn check_freq_axis(freqs_hz: &[f64]) -> Result<(), CavityError> {
    if freqs_hz.len() < 2 {
        return Err(CavityError::InvalidTrace(
            "a trace needs at least 2 samples".into(),
        ));
    }
    if let Some(w) = freqs_hz.windows(2).find(|w| w[1] <= w[0]) {
        return Err(CavityError::InvalidTrace(format!(
            "frequencies must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Frequency-ordered |S₁₁| samples (no phase information).
#[derive(Debug, Clone, Default)]
pub struct MagnitudeTrace {
    pub freqs_hz: Vec<f64>,
    pub mags: Vec<f64>,
    pub metadata: TraceMetadata,
}

impl MagnitudeTrace {
    pub fn new(freqs_hz: Vec<f64>, mags: Vec<f64>) -> Result<Self, CavityError> {
        let t = MagnitudeTrace {
            freqs_hz,
            mags,
            metadata: TraceMetadata::default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        if self.freqs_hz.len() != self.mags.len() {
            return Err(CavityError::InvalidTrace(format!(
                "{} frequencies but {} magnitudes",
                self.freqs_hz.len(),
                self.mags.len()
            )));
        }
        if self.mags.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(CavityError::InvalidTrace(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        check_freq_axis(&self.freqs_hz)
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }
}

/// A measured reflection trace, with or without phase.
#[derive(Debug, Clone)]
pub enum Trace {
    Complex(ComplexTrace),
    Magnitude(MagnitudeTrace),
}

impl Trace {
    pub fn freqs_hz(&self) -> &[f64] {
        match self {
            Trace::Complex(t) => &t.freqs_hz,
            Trace::Magnitude(t) => &t.freqs_hz,
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        match self {
            Trace::Complex(t) => t.magnitudes(),
            Trace::Magnitude(t) => t.mags.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.freqs_hz().len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz().is_empty()
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        match self {
            Trace::Complex(t) => t.validate(),
            Trace::Magnitude(t) => t.validate(),
        }
    }

    pub fn metadata(&self) -> &TraceMetadata {
        match self {
            Trace::Complex(t) => &t.metadata,
            Trace::Magnitude(t) => &t.metadata,
        }
    }
}

/// Reflection magnitude on a (field, frequency) grid: `mags[i][j]` belongs to
/// `fields_t[i]`, `freqs_hz[j]`.
#[derive(Debug, Clone, Default)]
pub struct FieldSweepMap {
    pub fields_t: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub mags: Vec<Vec<f64>>,
}

impl FieldSweepMap {
    pub fn validate(&self) -> Result<(), CavityError> {
        // Even a single-field map is a legal (degenerate) sweep; fitting
        // requires more and says so itself.
        if self.fields_t.is_empty() || self.fields_t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CavityError::InvalidTrace(
                "field axis must be nonempty and strictly increasing".into(),
            ));
        }
        check_freq_axis(&self.freqs_hz)?;
        if self.mags.len() != self.fields_t.len() {
            return Err(CavityError::InvalidTrace(format!(
                "{} magnitude rows for {} fields",
                self.mags.len(),
                self.fields_t.len()
            )));
        }
        for (i, row) in self.mags.iter().enumerate() {
            if row.len() != self.freqs_hz.len() {
                return Err(CavityError::InvalidTrace(format!(
                    "row {i} has {} samples, expected {}",
                    row.len(),
                    self.freqs_hz.len()
                )));
            }
            if row.iter().any(|m| !m.is_finite()) {
                return Err(CavityError::InvalidTrace(format!(
                    "row {i} contains non-finite magnitudes"
                )));
            }
        }
        Ok(())
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

/// S₁₁ assembled from a precomputed susceptibility value.
pub fn reflection_from_w(omega_hz: f64, res: &ResonatorParams, w: Complex64) -> Complex64 {
    let denom = Complex64::new(0.0, omega_hz - res.omega_r_hz) + res.kappa_tot_hz() / 2.0 + w;
    let background = Complex64::from_polar(res.amplitude_scale, res.phase_offset_rad);
    background * (1.0 - res.kappa_ext_hz / denom)
}

/// Bare-resonator reflection S₁₁(ω).
pub fn reflection_bare(omega_hz: f64, res: &ResonatorParams) -> Complex64 {
    reflection_from_w(omega_hz, res, Complex64::default())
}

/// Reflection S₁₁(ω) with the spin ensemble included.
pub fn reflection_coupled(
    omega_hz: f64,
    res: &ResonatorParams,
    ens: &EnsembleParams,
) -> Result<Complex64, CavityError> {
    Ok(reflection_from_w(
        omega_hz,
        res,
        ensemble_susceptibility(omega_hz, ens)?,
    ))
}

/// Total susceptibility of several independent spin lines.
pub fn susceptibility_sum(
    omega_hz: f64,
    lines: &[EnsembleParams],
) -> Result<Complex64, CavityError> {
    let mut w = Complex64::default();
    for ens in lines {
        w += ensemble_susceptibility(omega_hz, ens)?;
    }
    Ok(w)
}

const QUAD_TOL: f64 = 1e-8;

/// Ensemble susceptibility W(ω).
///
/// The Lorentzian lineshape evaluates in closed form (a Lorentzian convolved
/// with the Lorentzian kernel adds widths); Gaussian and Tabulated shapes go
/// through adaptive quadrature. With γ_hom = 0 the kernel reduces to
/// πρ(ω) − i·P∫ ρ(t)/(ω − t) dt.
pub fn ensemble_susceptibility(
    omega_hz: f64,
    ens: &EnsembleParams,
) -> Result<Complex64, CavityError> {
    ens.validate()?;
    let g2 = ens.g_ens_hz * ens.g_ens_hz;
    if g2 == 0.0 {
        return Ok(Complex64::default());
    }
    let gh = ens.gamma_hom_hz;
    match &ens.lineshape {
        Lineshape::Lorentzian => {
            let denom = Complex64::new(
                (ens.gamma_fwhm_hz + gh) / 2.0,
                omega_hz - ens.omega_s_hz,
            );
            Ok(g2 / denom)
        }
        Lineshape::Gaussian => {
            let sigma = ens.gamma_fwhm_hz / (2.0 * (2.0 * 2.0f64.ln()).sqrt());
            let ws = ens.omega_s_hz;
            let rho = move |t: f64| {
                let z = (t - ws) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            };
            let lo = omega_hz.min(ws) - 16.0 * sigma - 8.0 * gh;
            let hi = omega_hz.max(ws) + 16.0 * sigma + 8.0 * gh;
            susceptibility_by_quadrature(omega_hz, g2, gh, rho, lo, hi, &[ws])
        }
        Lineshape::Tabulated { omega_hz: grid, density } => {
            if gh == 0.0 {
                let re = PI * interp_linear(grid, density, omega_hz);
                let im = -hilbert_piecewise_linear(grid, density, omega_hz);
                return Ok(g2 * Complex64::new(re, im));
            }
            let g_grid = grid.clone();
            let d_grid = density.clone();
            let rho = move |t: f64| interp_linear(&g_grid, &d_grid, t);
            let lo = grid[0].min(omega_hz - 8.0 * gh);
            let hi = grid[grid.len() - 1].max(omega_hz + 8.0 * gh);
            let splits = [grid[0], grid[grid.len() - 1]];
            susceptibility_by_quadrature(omega_hz, g2, gh, rho, lo, hi, &splits)
        }
    }
}

fn susceptibility_by_quadrature<F: Fn(f64) -> f64>(
    omega_hz: f64,
    g2: f64,
    gamma_hom_hz: f64,
    rho: F,
    lo: f64,
    hi: f64,
    extra_splits: &[f64],
) -> Result<Complex64, CavityError> {
    if gamma_hom_hz > 0.0 {
        let kernel = move |t: f64| {
            rho(t) / Complex64::new(gamma_hom_hz / 2.0, omega_hz - t)
        };
        let mut splits = extra_splits.to_vec();
        splits.push(omega_hz);
        let w = quad::integrate_split(kernel, lo, hi, &splits, QUAD_TOL)?;
        return Ok(g2 * w);
    }
    // γ_hom → 0⁺ limit:  W/g² = πρ(ω) − i·P∫ ρ(t)/(ω − t) dt
    let pv = if omega_hz > lo && omega_hz < hi {
        quad::principal_value(&rho, lo, hi, omega_hz, QUAD_TOL)?
    } else {
        quad::integrate_split(
            |t| Complex64::new(rho(t) / (omega_hz - t), 0.0),
            lo,
            hi,
            extra_splits,
            QUAD_TOL,
        )?
        .re
    };
    Ok(g2 * Complex64::new(PI * rho(omega_hz), -pv))
}

/// Linear interpolation with zero extension outside the grid.
fn interp_linear(grid: &[f64], values: &[f64], x: f64) -> f64 {
    if x < grid[0] || x > grid[grid.len() - 1] {
        return 0.0;
    }
    let k = match grid.binary_search_by(|g| g.total_cmp(&x)) {
        Ok(k) => return values[k],
        Err(k) => k,
    };
    let (x0, x1) = (grid[k - 1], grid[k]);
    let t = (x - x0) / (x1 - x0);
    values[k - 1] * (1.0 - t) + values[k] * t
}

/// Exact principal value  P∫ ρ(t)/(x − t) dt  for a piecewise-linear ρ with
/// compact support on `grid`.
///
/// Per segment [t₀, t₁] with ρ extended linearly, the integral is
/// ρ̃(x)·(ln|x − t₀| − ln|x − t₁|) − m·(t₁ − t₀); summing per node groups the
/// logarithms with coefficients that vanish linearly as x approaches an
/// interior node, so evaluation at nodes is safe (the limit is taken).
fn hilbert_piecewise_linear(grid: &[f64], density: &[f64], x: f64) -> f64 {
    let n = grid.len();
    let mut total = 0.0;
    // slope term and node-grouped log terms
    let mut prev_rho_at_x = 0.0; // linear extension of the segment left of the node
    for k in 0..n {
        let rho_right = if k + 1 < n {
            let m = (density[k + 1] - density[k]) / (grid[k + 1] - grid[k]);
            total -= m * (grid[k + 1] - grid[k]);
            density[k] + m * (x - grid[k])
        } else {
            0.0
        };
        let coeff = rho_right - prev_rho_at_x;
        let d = x - grid[k];
        if coeff != 0.0 && d != 0.0 {
            total += coeff * d.abs().ln();
        }
        prev_rho_at_x = rho_right;
    }
    total
}

/// Dressed eigenfrequencies (ω₊, ω₋) of the coupled spin-resonator system.
pub fn dressed_frequencies(omega_r_hz: f64, omega_s_hz: f64, g_ens_hz: f64) -> (f64, f64) {
    let mid = 0.5 * (omega_r_hz + omega_s_hz);
    let delta = omega_r_hz - omega_s_hz;
    let half_split = (g_ens_hz * g_ens_hz + 0.25 * delta * delta).sqrt();
    (mid + half_split, mid - half_split)
}

/// Coupling regime classification attached to a cooperativity value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    StrongCoupling,
    HighCooperativity,
    Weak,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::StrongCoupling => "strong coupling",
            Regime::HighCooperativity => "high cooperativity",
            Regime::Weak => "weak",
        })
    }
}

/// Cooperativity C = g_ens²/(κ_tot·Γ) with its regime label.
pub fn cooperativity(
    g_ens_hz: f64,
    kappa_tot_hz: f64,
    gamma_hz: f64,
) -> Result<(f64, Regime), CavityError> {
    if !(kappa_tot_hz > 0.0) || !(gamma_hz > 0.0) {
        return Err(CavityError::NonPositiveRates {
            kappa_tot: kappa_tot_hz,
            gamma: gamma_hz,
        });
    }
    let c = g_ens_hz * g_ens_hz / (kappa_tot_hz * gamma_hz);
    let regime = if g_ens_hz > kappa_tot_hz && g_ens_hz > gamma_hz {
        Regime::StrongCoupling
    } else if c > 1.0 {
        Regime::HighCooperativity
    } else {
        Regime::Weak
    };
    Ok((c, regime))
}

/// Spin distribution recovered from a measured trace.
#[derive(Debug, Clone)]
pub struct InvertedDistribution {
    pub omega_hz: Vec<f64>,
    /// Clipped, scaled density ρ(ω) ≥ 0.
    pub density: Vec<f64>,
    /// Unclipped Re[W]/π, the raw deduction before scaling.
    pub raw: Vec<f64>,
    /// g_ens² used for the scaling: the supplied value squared, or the
    /// estimate ∫Re[W]/π dω when none was given.
    pub g_ens_sq_hz2: f64,
    /// Fraction of |mass| removed by the ρ ≥ 0 clip (noise diagnostic).
    pub clipped_mass: f64,
    /// Indices where |1 − S₁₁/background| < 1e-6 made the deduction blow up;
    /// those samples carry density 0.
    pub masked: Vec<usize>,
}

/// Recover the spin spectral density from a reflection trace by deducting
/// the bare-resonator response:
///
/// W(ω) = κ_ext/(1 − S₁₁(ω)/(a·e^{iφ})) − i(ω − ω_r) − κ_tot/2,
/// ρ(ω) = Re[W]/(π·g_ens²), clipped at zero.
///
/// With `g_ens = None` the density is normalized to unit area and the implied
/// g_ens² is reported instead.
pub fn invert_spin_distribution(
    trace: &ComplexTrace,
    res: &ResonatorParams,
    g_ens_hz: Option<f64>,
) -> Result<InvertedDistribution, CavityError> {
    trace.validate()?;
    res.validate()?;
    let background = Complex64::from_polar(res.amplitude_scale, res.phase_offset_rad);
    let mut raw = Vec::with_capacity(trace.len());
    let mut masked = Vec::new();
    for (k, (&f, &s)) in trace.freqs_hz.iter().zip(trace.values.iter()).enumerate() {
        let denom = 1.0 - s / background;
        if denom.norm() < 1e-6 {
            masked.push(k);
            raw.push(0.0);
            continue;
        }
        let w = res.kappa_ext_hz / denom
            - Complex64::new(0.0, f - res.omega_r_hz)
            - res.kappa_tot_hz() / 2.0;
        raw.push(w.re / PI);
    }
    let g2 = match g_ens_hz {
        Some(g) => g * g,
        None => trapezoid(&trace.freqs_hz, &raw),
    };
    if !(g2 > 0.0) || !g2.is_finite() {
        return Err(CavityError::InvalidEnsemble(format!(
            "nonpositive g_ens² ({g2}) — trace shows no absorption to normalize"
        )));
    }
    let clipped: Vec<f64> = raw.iter().map(|&r| r.max(0.0)).collect();
    let negative: Vec<f64> = raw.iter().map(|&r| (-r).max(0.0)).collect();
    let clipped_mass = trapezoid(&trace.freqs_hz, &negative) / g2;
    let density: Vec<f64> = clipped.iter().map(|&c| c / g2).collect();
    Ok(InvertedDistribution {
        omega_hz: trace.freqs_hz.clone(),
        density,
        raw,
        g_ens_sq_hz2: g2,
        clipped_mass,
        masked,
    })
}

/// Full width at half maximum of a sampled peak, by linear interpolation of
/// the half-maximum crossings around the global maximum.
pub fn fwhm_of_samples(x: &[f64], y: &[f64]) -> Option<f64> {
    let (k_max, &y_max) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(y_max > 0.0) {
        return None;
    }
    let half = y_max / 2.0;
    let crossing = |i: usize, j: usize| -> f64 {
        let t = (half - y[i]) / (y[j] - y[i]);
        x[i] + t * (x[j] - x[i])
    };
    let left = (0..k_max)
        .rev()
        .find(|&i| y[i] <= half)
        .map(|i| crossing(i, i + 1))?;
    let right = ((k_max + 1)..y.len())
        .find(|&i| y[i] <= half)
        .map(|i| crossing(i, i - 1))?;
    Some(right - left)
}
