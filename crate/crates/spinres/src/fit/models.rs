//! Ready-made fits: bare and spin-coupled reflection traces, relaxation
//! curves, inverted line shapes and dressed-branch crossings.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::crossing::{find_dips, refine_minimum};
use super::lm::{least_squares, FitError, FitProblem, FitResult, ModelId, ParamSpec};
use crate::cavity::{
    dressed_frequencies, fwhm_of_samples, reflection_bare, reflection_from_w, trapezoid,
    EnsembleParams, ResonatorParams, Trace,
};

/// Which side of critical coupling to prefer. Magnitude-only traces cannot
/// distinguish κ_int from κ_ext (swapping them leaves |S₁₁| unchanged), so
/// the caller picks the side; complex traces resolve it from the phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingRegime {
    #[default]
    Overcoupled,
    Undercoupled,
}

#[derive(Debug, Clone)]
pub struct ResonatorFit {
    pub params: ResonatorParams,
    pub regime: CouplingRegime,
    pub kappa_tot_hz: f64,
    pub kappa_tot_sigma_hz: f64,
    pub q_int: f64,
    pub q_int_sigma: f64,
    /// Noise level used for dip detection (given or estimated from the edges).
    pub noise_sigma: f64,
    pub result: FitResult,
}

pub(super) fn edge_window(n: usize) -> usize {
    (n / 20).clamp(3, (n / 2).max(1))
}

/// Noise level estimated from the first and last 5% of samples, where the
/// trace is assumed featureless.
pub(super) fn edge_noise_sigma(values: &[f64]) -> f64 {
    let n = values.len();
    let w = edge_window(n);
    if w * 2 > n {
        return 0.0;
    }
    let mut devs = Vec::with_capacity(2 * w);
    for side in [&values[..w], &values[n - w..]] {
        let mean = side.iter().sum::<f64>() / side.len() as f64;
        devs.extend(side.iter().map(|v| v - mean));
    }
    let dof = devs.len().saturating_sub(2).max(1) as f64;
    (devs.iter().map(|d| d * d).sum::<f64>() / dof).sqrt()
}

fn edge_mean(values: &[f64]) -> f64 {
    let n = values.len();
    let w = edge_window(n).min(n);
    let head = &values[..w];
    let tail = &values[n - w..];
    (head.iter().sum::<f64>() + tail.iter().sum::<f64>()) / (head.len() + tail.len()) as f64
}

fn edge_mean_complex(values: &[Complex64]) -> Complex64 {
    let n = values.len();
    let w = edge_window(n).min(n);
    let sum: Complex64 = values[..w].iter().sum::<Complex64>()
        + values[n - w..].iter().sum::<Complex64>();
    sum / (2 * w) as f64
}

/// Half-level full width of the dip at `imin`, by linear interpolation.
fn dip_width(freqs: &[f64], mags: &[f64], imin: usize, level: f64) -> Option<f64> {
    let mut left = None;
    for k in (1..=imin).rev() {
        if mags[k - 1] >= level && mags[k] < level {
            let t = (mags[k - 1] - level) / (mags[k - 1] - mags[k]);
            left = Some(freqs[k - 1] + t * (freqs[k] - freqs[k - 1]));
            break;
        }
    }
    let mut right = None;
    for k in imin..mags.len() - 1 {
        if mags[k] < level && mags[k + 1] >= level {
            let t = (level - mags[k]) / (mags[k + 1] - mags[k]);
            right = Some(freqs[k] + t * (freqs[k + 1] - freqs[k]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Some(r - l),
        (Some(l), None) => Some(2.0 * (freqs[imin] - l)),
        (None, Some(r)) => Some(2.0 * (r - freqs[imin])),
        (None, None) => None,
    }
}

struct ResonatorGuess {
    omega_r: f64,
    kappa_tot: f64,
    beta: f64,
    amplitude: f64,
}

/// Starting values from the dip geometry of a magnitude trace.
///
/// For |S₁₁|² = (Δ² + b²)/(Δ² + κ_tot²/4) with β = |b|/(κ_tot/2), the full
/// width at the half-depth level is κ_tot·√((1+3β)/(3+β)); inverting that
/// gives κ_tot from the measured width, and the dip floor gives β, hence the
/// κ_int/κ_ext split.
fn resonator_guess(freqs: &[f64], mags: &[f64]) -> ResonatorGuess {
    let n = freqs.len();
    let span = freqs[n - 1] - freqs[0];
    let max_mag = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut a0 = edge_mean(mags);
    if !(a0 > 0.0) {
        a0 = max_mag.max(f64::MIN_POSITIVE);
    }
    let imin = mags
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (f_dip, m_dip) = if imin > 0 && imin + 1 < n {
        refine_minimum(
            freqs[imin - 1],
            freqs[imin],
            freqs[imin + 1],
            mags[imin - 1],
            mags[imin],
            mags[imin + 1],
        )
    } else {
        (freqs[imin], mags[imin])
    };
    let beta = (m_dip.max(0.0) / a0).clamp(1e-6, 1.0 - 1e-6);
    let level = 0.5 * (a0 + m_dip);
    let width = dip_width(freqs, mags, imin, level).unwrap_or(span / 6.0);
    let kappa_tot = (width * ((3.0 + beta) / (1.0 + 3.0 * beta)).sqrt()).max(span * 1e-9);
    ResonatorGuess {
        omega_r: f_dip.clamp(freqs[0], freqs[n - 1]),
        kappa_tot,
        beta,
        amplitude: a0,
    }
}

fn kappa_split(kappa_tot: f64, beta: f64, regime: CouplingRegime) -> (f64, f64) {
    let ext = match regime {
        CouplingRegime::Overcoupled => kappa_tot * (1.0 + beta) / 2.0,
        CouplingRegime::Undercoupled => kappa_tot * (1.0 - beta) / 2.0,
    };
    let lo = kappa_tot * 1e-6;
    let hi = kappa_tot * (1.0 - 1e-6);
    let ext = ext.clamp(lo, hi);
    (kappa_tot - ext, ext)
}

/// Fit a bare resonator to a reflection trace.
///
/// Magnitude-only traces hold the phase offset at zero and are fit twice,
/// once from each side of critical coupling, keeping the lower residual
/// (the requested `regime` wins ties — for pure magnitude data the two are
/// exactly degenerate). Declares no dip when the peak-to-peak spread is
/// within 3 noise levels.
pub fn fit_resonator(
    trace: &Trace,
    regime: CouplingRegime,
    noise_sigma: Option<f64>,
) -> Result<ResonatorFit, FitError> {
    trace.validate()?;
    let freqs = trace.freqs_hz();
    let mags = trace.magnitudes();
    let n = freqs.len();
    let sigma = noise_sigma.unwrap_or_else(|| edge_noise_sigma(&mags));

    let max_mag = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_mag = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let peak_to_peak = max_mag - min_mag;
    let floor = (3.0 * sigma).max(1e-12 * max_mag.abs().max(1.0));
    if peak_to_peak < floor {
        return Err(FitError::DipNotFound { peak_to_peak, floor });
    }

    let guess = resonator_guess(freqs, &mags);
    let span = freqs[n - 1] - freqs[0];
    let kappa_lo = guess.kappa_tot * 1e-9;
    let kappa_hi = span * 100.0;

    let (amp0, phase0, complex_values) = match trace {
        Trace::Complex(t) => {
            let bg = edge_mean_complex(&t.values);
            let amp = bg.norm().max(f64::MIN_POSITIVE);
            (amp, bg.arg(), Some(&t.values))
        }
        Trace::Magnitude(_) => (guess.amplitude, 0.0, None),
    };

    let run = |side: CouplingRegime| -> Result<FitResult, FitError> {
        let (ki0, ke0) = kappa_split(guess.kappa_tot, guess.beta, side);
        let mut params = vec![
            ParamSpec::bounded("omega_r", guess.omega_r, freqs[0], freqs[n - 1]),
            ParamSpec::bounded("kappa_int", ki0.clamp(kappa_lo, kappa_hi), kappa_lo, kappa_hi),
            ParamSpec::bounded("kappa_ext", ke0.clamp(kappa_lo, kappa_hi), kappa_lo, kappa_hi),
            ParamSpec::bounded("amplitude", amp0, amp0 * 1e-6, amp0 * 1e6),
        ];
        let problem = match complex_values {
            Some(values) => {
                params.push(ParamSpec::bounded(
                    "phase",
                    phase0,
                    phase0 - 2.0 * std::f64::consts::PI,
                    phase0 + 2.0 * std::f64::consts::PI,
                ));
                FitProblem::new(ModelId::BareReflection, params, 2 * n, move |x, out| {
                    let res = ResonatorParams {
                        omega_r_hz: x[0],
                        kappa_int_hz: x[1],
                        kappa_ext_hz: x[2],
                        phase_offset_rad: x[4],
                        amplitude_scale: x[3],
                    };
                    for (i, (&f, v)) in freqs.iter().zip(values).enumerate() {
                        let d = reflection_bare(f, &res) - v;
                        out[2 * i] = d.re;
                        out[2 * i + 1] = d.im;
                    }
                    Ok(())
                })
            }
            None => {
                let mags = &mags;
                FitProblem::new(ModelId::BareReflection, params, n, move |x, out| {
                    let res = ResonatorParams {
                        omega_r_hz: x[0],
                        kappa_int_hz: x[1],
                        kappa_ext_hz: x[2],
                        phase_offset_rad: 0.0,
                        amplitude_scale: x[3],
                    };
                    for (i, (&f, &m)) in freqs.iter().zip(mags.iter()).enumerate() {
                        out[i] = reflection_bare(f, &res).norm() - m;
                    }
                    Ok(())
                })
            }
        };
        least_squares(&problem)
    };

    let mirror = match regime {
        CouplingRegime::Overcoupled => CouplingRegime::Undercoupled,
        CouplingRegime::Undercoupled => CouplingRegime::Overcoupled,
    };
    let first = run(regime)?;
    let second = run(mirror)?;
    // ties go to the requested side
    let result = if second.rss < first.rss * (1.0 - 1e-9) {
        second
    } else {
        first
    };

    let v = &result.values;
    let params = ResonatorParams {
        omega_r_hz: v[0],
        kappa_int_hz: v[1],
        kappa_ext_hz: v[2],
        phase_offset_rad: if v.len() > 4 { v[4] } else { 0.0 },
        amplitude_scale: v[3],
    };
    let kappa_tot = params.kappa_tot_hz();
    let fitted_regime = if params.kappa_ext_hz > kappa_tot / 2.0 {
        CouplingRegime::Overcoupled
    } else {
        CouplingRegime::Undercoupled
    };
    let var_tot = result.covariance(1, 1) + result.covariance(2, 2) + 2.0 * result.covariance(1, 2);
    let kappa_tot_sigma = var_tot.max(0.0).sqrt();
    let q = params.omega_r_hz / params.kappa_int_hz;
    let var_q = (q / params.omega_r_hz).powi(2) * result.covariance(0, 0)
        + (q / params.kappa_int_hz).powi(2) * result.covariance(1, 1)
        - 2.0 * (q / params.omega_r_hz) * (q / params.kappa_int_hz) * result.covariance(0, 1);
    Ok(ResonatorFit {
        params,
        regime: fitted_regime,
        kappa_tot_hz: kappa_tot,
        kappa_tot_sigma_hz: kappa_tot_sigma,
        q_int: q,
        q_int_sigma: var_q.max(0.0).sqrt(),
        noise_sigma: sigma,
        result,
    })
}

#[derive(Debug, Clone)]
pub struct CoupledFit {
    pub ensemble: EnsembleParams,
    pub result: FitResult,
}

/// Fit one Lorentzian spin line coupled to a resonator of known (fixed)
/// parameters, returning (g_ens, ω_s, Γ). Starting values come from the dip
/// pattern: with two dips, half their separation seeds g and their sum
/// locates ω_s through ω₊ + ω₋ = ω_r + ω_s.
pub fn fit_coupled_spectrum(
    trace: &Trace,
    resonator: &ResonatorParams,
    init: Option<(f64, f64, f64)>,
) -> Result<CoupledFit, FitError> {
    trace.validate()?;
    resonator.validate()?;
    let freqs = trace.freqs_hz();
    let mags = trace.magnitudes();
    let n = freqs.len();
    let span = freqs[n - 1] - freqs[0];
    let kappa_tot = resonator.kappa_tot_hz();

    let (g0, ws0, gamma0) = init.unwrap_or_else(|| {
        let sigma = edge_noise_sigma(&mags);
        let max_mag = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_mag = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let floor = (3.0 * sigma).max(0.1 * (max_mag - min_mag));
        let dips = find_dips(freqs, &mags, floor, 2);
        if dips.len() >= 2 {
            let sep = dips[1].freq_hz - dips[0].freq_hz;
            (
                sep / 2.0,
                dips[0].freq_hz + dips[1].freq_hz - resonator.omega_r_hz,
                sep / 2.0,
            )
        } else {
            (kappa_tot / 2.0, resonator.omega_r_hz, kappa_tot)
        }
    });

    let gamma_lo = span * 1e-9;
    let params = vec![
        ParamSpec::bounded("g_ens", g0.clamp(0.0, span * 10.0), 0.0, span * 10.0),
        ParamSpec::bounded(
            "omega_s",
            ws0,
            freqs[0] - 10.0 * span,
            freqs[n - 1] + 10.0 * span,
        ),
        ParamSpec::bounded(
            "gamma_fwhm",
            gamma0.clamp(gamma_lo * 2.0, span * 100.0),
            gamma_lo,
            span * 100.0,
        ),
    ];

    let model = |x: &[f64], f: f64| -> Complex64 {
        let w = x[0] * x[0] / Complex64::new(x[2] / 2.0, f - x[1]);
        reflection_from_w(f, resonator, w)
    };
    let problem = match trace {
        Trace::Complex(t) => {
            let values = &t.values;
            FitProblem::new(ModelId::CoupledReflection, params, 2 * n, move |x, out| {
                for (i, (&f, v)) in freqs.iter().zip(values).enumerate() {
                    let d = model(x, f) - v;
                    out[2 * i] = d.re;
                    out[2 * i + 1] = d.im;
                }
                Ok(())
            })
        }
        Trace::Magnitude(_) => {
            let mags = &mags;
            FitProblem::new(ModelId::CoupledReflection, params, n, move |x, out| {
                for (i, (&f, &m)) in freqs.iter().zip(mags.iter()).enumerate() {
                    out[i] = model(x, f).norm() - m;
                }
                Ok(())
            })
        }
    };
    let result = least_squares(&problem)?;
    let ensemble = EnsembleParams::lorentzian(result.values[0], result.values[1], result.values[2]);
    Ok(CoupledFit { ensemble, result })
}

fn validate_curve(x: &[f64], y: &[f64], what: &str) -> Result<(), FitError> {
    if x.len() != y.len() {
        return Err(FitError::Invalid(format!(
            "{what}: {} abscissas but {} samples",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(FitError::InsufficientData(format!(
            "{what}: need at least 3 samples, got {}",
            x.len()
        )));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FitError::Invalid(format!(
            "{what}: abscissas must be strictly increasing"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::Invalid(format!("{what}: non-finite samples")));
    }
    Ok(())
}

/// Interpolated abscissa where `y` first crosses `target` from below.
fn first_crossing(x: &[f64], y: &[f64], target: f64, rising: bool) -> Option<f64> {
    for k in 1..x.len() {
        let (a, b) = (y[k - 1], y[k]);
        let hit = if rising { a < target && b >= target } else { a > target && b <= target };
        if hit {
            let t = (target - a) / (b - a);
            return Some(x[k - 1] + t * (x[k] - x[k - 1]));
        }
    }
    None
}

/// Fit A(1 − e^{−T/T₁}) to a saturation-recovery curve.
/// Parameters: `amplitude`, `t1`.
pub fn fit_t1(times_s: &[f64], signal: &[f64], init: Option<(f64, f64)>) -> Result<FitResult, FitError> {
    validate_curve(times_s, signal, "saturation recovery")?;
    let span = times_s[times_s.len() - 1] - times_s[0];
    let (a0, t10) = init.unwrap_or_else(|| {
        let a0 = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let a0 = if a0 > 0.0 { a0 } else { 1.0 };
        let t10 = first_crossing(times_s, signal, a0 * (1.0 - (-1.0_f64).exp()), true)
            .unwrap_or(span / 2.0);
        (a0, t10.max(span * 1e-3))
    });
    let t_lo = span * 1e-6;
    let t_hi = span * 1e3;
    let params = vec![
        ParamSpec::free("amplitude", a0),
        ParamSpec::bounded("t1", t10.clamp(t_lo, t_hi), t_lo, t_hi),
    ];
    let problem = FitProblem::new(ModelId::T1Recovery, params, times_s.len(), move |x, out| {
        for (o, (&t, &s)) in out.iter_mut().zip(times_s.iter().zip(signal)) {
            *o = x[0] * (1.0 - (-t / x[1]).exp()) - s;
        }
        Ok(())
    });
    least_squares(&problem)
}

/// Fit A·exp[−(2τ/T₂)^p] to an echo-decay curve sampled against 2τ.
/// Parameters: `amplitude`, `t2`, `stretch_p` (p confined to [0.5, 3]).
pub fn fit_t2(
    two_tau_s: &[f64],
    amplitude: &[f64],
    init: Option<(f64, f64, f64)>,
) -> Result<FitResult, FitError> {
    validate_curve(two_tau_s, amplitude, "echo decay")?;
    let span = two_tau_s[two_tau_s.len() - 1] - two_tau_s[0];
    let (a0, t20, p0) = init.unwrap_or_else(|| {
        let a0 = amplitude.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let a0 = if a0 > 0.0 { a0 } else { 1.0 };
        let t20 = first_crossing(two_tau_s, amplitude, a0 * (-1.0_f64).exp(), false)
            .unwrap_or(span / 2.0);
        (a0, t20.max(span * 1e-3), 1.0)
    });
    let t_lo = span * 1e-6;
    let t_hi = span * 1e3;
    let params = vec![
        ParamSpec::free("amplitude", a0),
        ParamSpec::bounded("t2", t20.clamp(t_lo, t_hi), t_lo, t_hi),
        ParamSpec::bounded("stretch_p", p0.clamp(0.5, 3.0), 0.5, 3.0),
    ];
    let problem = FitProblem::new(ModelId::T2Stretched, params, two_tau_s.len(), move |x, out| {
        for (o, (&tt, &a)) in out.iter_mut().zip(two_tau_s.iter().zip(amplitude)) {
            *o = x[0] * (-(tt / x[1]).powf(x[2])).exp() - a;
        }
        Ok(())
    });
    least_squares(&problem)
}

/// Fit a single Lorentzian to a sampled spectral density.
/// Parameters: `center`, `fwhm`, `area`.
pub fn fit_lorentzian_density(omega_hz: &[f64], density: &[f64]) -> Result<FitResult, FitError> {
    validate_curve(omega_hz, density, "spectral density")?;
    let n = omega_hz.len();
    let span = omega_hz[n - 1] - omega_hz[0];
    let imax = density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let c0 = omega_hz[imax];
    let w0 = fwhm_of_samples(omega_hz, density).unwrap_or(span / 10.0);
    let area0 = trapezoid(omega_hz, density).max(f64::MIN_POSITIVE);
    let params = vec![
        ParamSpec::bounded("center", c0, omega_hz[0] - span, omega_hz[n - 1] + span),
        ParamSpec::bounded("fwhm", w0.clamp(span * 1e-6, span * 100.0), span * 1e-9, span * 100.0),
        ParamSpec::bounded("area", area0, 0.0, f64::INFINITY),
    ];
    let problem = FitProblem::new(ModelId::LorentzianDensity, params, n, move |x, out| {
        let half = x[1] / 2.0;
        let norm = x[2] * half / std::f64::consts::PI;
        for (o, (&w, &d)) in out.iter_mut().zip(omega_hz.iter().zip(density)) {
            let delta = w - x[0];
            *o = norm / (delta * delta + half * half) - d;
        }
        Ok(())
    });
    least_squares(&problem)
}

/// Fit the collective coupling to measured dressed-branch frequencies
/// ω±(B), with the bare spin line supplied as a function of field.
/// Parameters: `g_ens` and (optionally free) `field_offset`, which is added
/// to the stored field axis before evaluating the spin line.
pub fn fit_dressed_branches(
    fields_t: &[f64],
    upper_hz: &[f64],
    lower_hz: &[f64],
    spin_freq_of_field: impl Fn(f64) -> f64,
    omega_r_hz: f64,
    g_init_hz: f64,
    fit_field_offset: bool,
) -> Result<FitResult, FitError> {
    validate_curve(fields_t, upper_hz, "upper branch")?;
    validate_curve(fields_t, lower_hz, "lower branch")?;
    if !(omega_r_hz > 0.0) {
        return Err(FitError::Invalid(format!(
            "omega_r must be positive, got {omega_r_hz}"
        )));
    }
    let n = fields_t.len();
    let field_span = (fields_t[n - 1] - fields_t[0]).max(1e-6);
    let params = vec![
        ParamSpec::bounded("g_ens", g_init_hz.max(0.0), 0.0, 1e12),
        ParamSpec {
            name: "field_offset".into(),
            initial: 0.0,
            lower: -10.0 * field_span,
            upper: 10.0 * field_span,
            fixed: !fit_field_offset,
        },
    ];
    let problem = FitProblem::new(ModelId::DressedCrossing, params, 2 * n, move |x, out| {
        for (i, &b) in fields_t.iter().enumerate() {
            let ws = spin_freq_of_field(b + x[1]);
            let (hi, lo) = dressed_frequencies(omega_r_hz, ws, x[0]);
            out[2 * i] = hi - upper_hz[i];
            out[2 * i + 1] = lo - lower_hz[i];
        }
        Ok(())
    });
    least_squares(&problem)
}
