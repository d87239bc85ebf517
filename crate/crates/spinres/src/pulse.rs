//! Rotating-frame Bloch dynamics for pulse sequences, ensemble-averaged
//! Hahn-echo simulation, and the closed-form relaxation models fitted to
//! pulse data.
//!
//! Conventions: a pulse rotates the magnetization about the effective field
//! (Ω cosφ, Ω sinφ, Δ) — all Hz — at rate √(Ω² + Δ²); free precession
//! advances the transverse phase as m⊥ → m⊥·e^{−i2πΔt}. A nutation angle of
//! π/2 about φ = 0 therefore takes +z to +y.

use crate::par;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, thiserror::Error)]
pub enum PulseError {
    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid relaxation parameters: {0}")]
    InvalidRelaxation(String),
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error(
        "pulse of {duration_s} s needs {steps} operator-split steps to keep \
         the step below T2/100; refusing (duration far exceeds relaxation)"
    )]
    StepUnderflow { duration_s: f64, steps: usize },
}

/// One element of a pulse sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Pulse {
        duration_s: f64,
        rabi_hz: f64,
        phase_rad: f64,
    },
    Delay {
        duration_s: f64,
    },
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        match *self {
            Segment::Pulse { duration_s, .. } | Segment::Delay { duration_s } => duration_s,
        }
    }
}

/// Ordered pulse/delay segments plus the acquisition window the instrument
/// records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
    pub acquisition_start_s: f64,
    pub acquisition_length_s: f64,
}

impl PulseSequence {
    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(Segment::duration_s).sum()
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        let bad = |msg: String| Err(PulseError::InvalidSequence(msg));
        if self.segments.is_empty() {
            return bad("sequence has no segments".into());
        }
        for (k, seg) in self.segments.iter().enumerate() {
            if !(seg.duration_s() > 0.0) || !seg.duration_s().is_finite() {
                return bad(format!(
                    "segment {k} has nonpositive duration {}",
                    seg.duration_s()
                ));
            }
            if let Segment::Pulse { rabi_hz, .. } = seg {
                if *rabi_hz < 0.0 || !rabi_hz.is_finite() {
                    return bad(format!("segment {k} has invalid Rabi frequency {rabi_hz}"));
                }
            }
        }
        let total = self.total_duration_s();
        if !total.is_finite() {
            return bad("total duration is not finite".into());
        }
        if self.acquisition_start_s < 0.0
            || self.acquisition_length_s < 0.0
            || self.acquisition_start_s + self.acquisition_length_s > total * (1.0 + 1e-12)
        {
            return bad(format!(
                "acquisition window [{}, {}] s outside the sequence span [0, {total}] s",
                self.acquisition_start_s,
                self.acquisition_start_s + self.acquisition_length_s
            ));
        }
        Ok(())
    }
}

/// Longitudinal/transverse relaxation times, the stretching exponent of the
/// echo-decay envelope, and the equilibrium polarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationParams {
    pub t1_s: f64,
    pub t2_s: f64,
    #[serde(default = "default_stretch")]
    pub stretch_p: f64,
    #[serde(default = "default_mz")]
    pub equilibrium_mz: f64,
}

fn default_stretch() -> f64 {
    1.0
}
fn default_mz() -> f64 {
    1.0
}

impl Default for RelaxationParams {
    /// No relaxation: both times infinite.
    fn default() -> Self {
        RelaxationParams {
            t1_s: f64::INFINITY,
            t2_s: f64::INFINITY,
            stretch_p: 1.0,
            equilibrium_mz: 1.0,
        }
    }
}

impl RelaxationParams {
    pub fn new(t1_s: f64, t2_s: f64, stretch_p: f64) -> Self {
        RelaxationParams {
            t1_s,
            t2_s,
            stretch_p,
            equilibrium_mz: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        let bad = |msg: String| Err(PulseError::InvalidRelaxation(msg));
        if !(self.t1_s > 0.0) || !(self.t2_s > 0.0) {
            return bad(format!(
                "relaxation times must be positive, got t1 = {}, t2 = {}",
                self.t1_s, self.t2_s
            ));
        }
        if !(0.5..=3.0).contains(&self.stretch_p) {
            return bad(format!(
                "stretching exponent must lie in [0.5, 3], got {}",
                self.stretch_p
            ));
        }
        if !self.equilibrium_mz.is_finite() {
            return bad("equilibrium magnetization must be finite".into());
        }
        Ok(())
    }

    /// Physically suspect but not invalid settings (t2 beyond the 2·t1
    /// bound, |equilibrium| above 1).
    pub fn physical_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.t2_s > 2.0 * self.t1_s {
            w.push(format!(
                "t2 = {} s exceeds the physical bound 2·t1 = {} s",
                self.t2_s,
                2.0 * self.t1_s
            ));
        }
        if self.equilibrium_mz.abs() > 1.0 {
            w.push(format!(
                "|equilibrium_mz| = {} exceeds 1",
                self.equilibrium_mz.abs()
            ));
        }
        w
    }
}

/// Magnetization samples along a pulse sequence.
#[derive(Debug, Clone)]
pub struct BlochTrajectory {
    pub times_s: Vec<f64>,
    pub magnetization: Vec<[f64; 3]>,
}

/// Ensemble-averaged transverse magnetization around the echo.
#[derive(Debug, Clone)]
pub struct EchoTrace {
    pub times_s: Vec<f64>,
    pub m_perp: Vec<Complex64>,
    /// Nominal echo center: twice the pulse spacing.
    pub echo_time_s: f64,
    /// |⟨m⊥⟩| at the echo center, envelope included.
    pub echo_amplitude: f64,
    pub warnings: Vec<String>,
}

fn rotate(m: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let dot = axis[0] * m[0] + axis[1] * m[1] + axis[2] * m[2];
    let cross = [
        axis[1] * m[2] - axis[2] * m[1],
        axis[2] * m[0] - axis[0] * m[2],
        axis[0] * m[1] - axis[1] * m[0],
    ];
    std::array::from_fn(|i| m[i] * c + cross[i] * s + axis[i] * dot * (1.0 - c))
}

/// Coherent nutation for `duration_s` about the effective field
/// (Ω cosφ, Ω sinφ, Δ); exact, no relaxation.
pub fn nutation(
    m: [f64; 3],
    rabi_hz: f64,
    phase_rad: f64,
    detuning_hz: f64,
    duration_s: f64,
) -> [f64; 3] {
    let omega_eff = rabi_hz.hypot(detuning_hz);
    if omega_eff * duration_s == 0.0 {
        return m;
    }
    let axis = [
        rabi_hz * phase_rad.cos() / omega_eff,
        rabi_hz * phase_rad.sin() / omega_eff,
        detuning_hz / omega_eff,
    ];
    rotate(m, axis, -2.0 * PI * omega_eff * duration_s)
}

/// Instantaneous rotation equivalent to a pulse of the given nutation angle
/// (2π·Ω·t) in the zero-duration limit.
pub fn ideal_pulse(m: [f64; 3], nutation_angle_rad: f64, phase_rad: f64) -> [f64; 3] {
    rotate(
        m,
        [phase_rad.cos(), phase_rad.sin(), 0.0],
        -nutation_angle_rad,
    )
}

/// Pure relaxation for `dt` (no precession).
fn relax_step(m: [f64; 3], dt: f64, relax: &RelaxationParams) -> [f64; 3] {
    let e2 = (-dt / relax.t2_s).exp();
    let e1 = (-dt / relax.t1_s).exp();
    [
        m[0] * e2,
        m[1] * e2,
        relax.equilibrium_mz + (m[2] - relax.equilibrium_mz) * e1,
    ]
}

/// Free evolution: transverse decay with T₂ while phase-rotating at the
/// detuning, longitudinal recovery toward equilibrium with T₁. Closed form.
pub fn evolve_delay(
    m: [f64; 3],
    duration_s: f64,
    detuning_hz: f64,
    relax: &RelaxationParams,
) -> [f64; 3] {
    let e2 = (-duration_s / relax.t2_s).exp();
    let e1 = (-duration_s / relax.t1_s).exp();
    let phase = -2.0 * PI * detuning_hz * duration_s;
    let perp = Complex64::new(m[0], m[1]) * Complex64::from_polar(e2, phase);
    [
        perp.re,
        perp.im,
        relax.equilibrium_mz + (m[2] - relax.equilibrium_mz) * e1,
    ]
}

const MAX_SPLIT_STEPS: usize = 5_000_000;

fn pulse_split_steps(duration_s: f64, relax: &RelaxationParams) -> Result<usize, PulseError> {
    let t_min = relax.t1_s.min(relax.t2_s);
    if t_min.is_infinite() {
        return Ok(1);
    }
    // keep the operator-splitting step at or below T₂/100 (T₁ likewise)
    let steps = (duration_s * 100.0 / t_min).ceil().max(1.0);
    if steps > MAX_SPLIT_STEPS as f64 {
        return Err(PulseError::StepUnderflow {
            duration_s,
            steps: steps as usize,
        });
    }
    Ok(steps as usize)
}

/// One pulse segment with relaxation, by symmetric operator splitting
/// (relax half-step, exact rotation, relax half-step).
pub fn evolve_pulse(
    mut m: [f64; 3],
    duration_s: f64,
    rabi_hz: f64,
    phase_rad: f64,
    detuning_hz: f64,
    relax: &RelaxationParams,
) -> Result<[f64; 3], PulseError> {
    let steps = pulse_split_steps(duration_s, relax)?;
    if steps == 1 && relax.t1_s.is_infinite() && relax.t2_s.is_infinite() {
        return Ok(nutation(m, rabi_hz, phase_rad, detuning_hz, duration_s));
    }
    let dt = duration_s / steps as f64;
    for _ in 0..steps {
        m = relax_step(m, 0.5 * dt, relax);
        m = nutation(m, rabi_hz, phase_rad, detuning_hz, dt);
        m = relax_step(m, 0.5 * dt, relax);
    }
    Ok(m)
}

fn plot_subdivisions(duration_s: f64, rate_hz: f64, relax: &RelaxationParams) -> usize {
    let t_min = relax.t1_s.min(relax.t2_s);
    let by_rate = 8.0 * rate_hz.abs() * duration_s;
    let by_relax = if t_min.is_finite() {
        4.0 * duration_s / t_min
    } else {
        0.0
    };
    (by_rate.max(by_relax).ceil() as usize).clamp(1, 4096)
}

/// Propagate the magnetization through a sequence at one detuning, starting
/// from equilibrium, sampling densely enough to resolve nutation, precession
/// and relaxation.
pub fn propagate_bloch(
    seq: &PulseSequence,
    relax: &RelaxationParams,
    detuning_hz: f64,
) -> Result<BlochTrajectory, PulseError> {
    seq.validate()?;
    relax.validate()?;
    let mut m = [0.0, 0.0, relax.equilibrium_mz];
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut traj = vec![m];
    for seg in &seq.segments {
        match *seg {
            Segment::Pulse {
                duration_s,
                rabi_hz,
                phase_rad,
            } => {
                let omega_eff = rabi_hz.hypot(detuning_hz);
                let n = plot_subdivisions(duration_s, omega_eff, relax)
                    .max(pulse_split_steps(duration_s, relax)?);
                let dt = duration_s / n as f64;
                for k in 1..=n {
                    m = evolve_pulse(m, dt, rabi_hz, phase_rad, detuning_hz, relax)?;
                    times.push(t + k as f64 * dt);
                    traj.push(m);
                }
                t += duration_s;
            }
            Segment::Delay { duration_s } => {
                let n = plot_subdivisions(duration_s, detuning_hz, relax);
                let dt = duration_s / n as f64;
                for k in 1..=n {
                    m = evolve_delay(m, dt, detuning_hz, relax);
                    times.push(t + k as f64 * dt);
                    traj.push(m);
                }
                t += duration_s;
            }
        }
    }
    Ok(BlochTrajectory {
        times_s: times,
        magnetization: traj,
    })
}

const ECHO_SAMPLES: usize = 257; // odd, so the echo center is an exact sample

/// Hahn echo (π/2 − τ − π − τ): ensemble average over `n_spins` detunings
/// drawn from a Lorentzian of the given FWHM by stratified quantile-midpoint
/// sampling. Pulses are ideal; the spins dephase and refocus coherently, and
/// the measured T₂ decay enters once as the phenomenological envelope
/// exp[−(2τ/T₂)^p] at the echo time (the simulation itself runs without
/// transverse decay so the envelope is not double-counted).
pub fn simulate_hahn_echo(
    tau_s: f64,
    ensemble_fwhm_hz: f64,
    relax: &RelaxationParams,
    n_spins: usize,
) -> Result<EchoTrace, PulseError> {
    relax.validate()?;
    if tau_s < 0.0 || !tau_s.is_finite() {
        return Err(PulseError::InvalidSequence(format!(
            "pulse spacing must be nonnegative and finite, got {tau_s}"
        )));
    }
    if ensemble_fwhm_hz < 0.0 || !ensemble_fwhm_hz.is_finite() {
        return Err(PulseError::InvalidEnsemble(format!(
            "ensemble FWHM must be nonnegative, got {ensemble_fwhm_hz}"
        )));
    }
    if n_spins < 2 {
        return Err(PulseError::InvalidEnsemble(format!(
            "need at least 2 spins, got {n_spins}"
        )));
    }
    let mut warnings = relax.physical_warnings();
    if n_spins < 100 {
        warnings.push(format!(
            "{n_spins} spins is below 100; the ensemble average may be inaccurate"
        ));
    }

    let envelope = (-(2.0 * tau_s / relax.t2_s).powf(relax.stretch_p)).exp();
    if tau_s == 0.0 {
        // both pulses coincide; the "echo" is the initial coherence
        return Ok(EchoTrace {
            times_s: vec![0.0],
            m_perp: vec![Complex64::new(0.0, -1.0) * envelope],
            echo_time_s: 0.0,
            echo_amplitude: envelope,
            warnings,
        });
    }

    let half_width = if ensemble_fwhm_hz > 0.0 {
        tau_s.min(4.0 / (PI * ensemble_fwhm_hz))
    } else {
        tau_s
    };
    let half_n = (ECHO_SAMPLES / 2) as f64;
    let times: Vec<f64> = (0..ECHO_SAMPLES)
        .map(|j| 2.0 * tau_s + (j as f64 - half_n) / half_n * half_width)
        .collect();

    let detuning = |k: usize| {
        let u = (k as f64 + 0.5) / n_spins as f64;
        0.5 * ensemble_fwhm_hz * (PI * (u - 0.5)).tan()
    };
    let free = RelaxationParams::default();
    let m_perp: Vec<Complex64> = times
        .iter()
        .map(|&t| {
            let sum = par::sum_complex(n_spins, |k| {
                let d = detuning(k);
                let mut m = [0.0, 0.0, 1.0];
                m = ideal_pulse(m, PI / 2.0, 0.0);
                m = evolve_delay(m, tau_s, d, &free);
                m = ideal_pulse(m, PI, 0.0);
                m = evolve_delay(m, t - tau_s, d, &free);
                Complex64::new(m[0], m[1])
            });
            sum / n_spins as f64 * envelope
        })
        .collect();
    let echo_amplitude = m_perp[ECHO_SAMPLES / 2].norm();
    Ok(EchoTrace {
        times_s: times,
        m_perp,
        echo_time_s: 2.0 * tau_s,
        echo_amplitude,
        warnings,
    })
}

/// Saturation-recovery signal S(T) = amplitude·(1 − e^{−T/t1}).
pub fn saturation_recovery_model(t_s: f64, t1_s: f64, amplitude: f64) -> f64 {
    amplitude * (1.0 - (-t_s / t1_s).exp())
}

/// Echo-decay envelope A(2τ) = amplitude·exp[−(2τ/t2)^p].
pub fn echo_decay_model(two_tau_s: f64, t2_s: f64, p: f64, amplitude: f64) -> f64 {
    amplitude * (-(two_tau_s / t2_s).powf(p)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn norm(m: [f64; 3]) -> f64 {
        (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt()
    }

    #[test]
    fn quarter_turn_tips_equilibrium_into_the_plane() {
        let m = ideal_pulse([0.0, 0.0, 1.0], PI / 2.0, 0.0);
        assert!(m[2].abs() < 1e-9);
        assert_relative_eq!(m[1].abs(), 1.0, max_relative = 1e-12);
        assert!(m[0].abs() < 1e-12);
    }

    #[test]
    fn half_turn_inverts_longitudinal_magnetization() {
        let m = ideal_pulse([0.0, 0.0, 1.0], PI, 0.0);
        assert!((m[2] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_pulse_matches_ideal_rotation() {
        // nutation angle 2π·Ω·t = π/2 with Δ = 0
        let fine = nutation([0.0, 0.0, 1.0], 2.5e8, 0.3, 0.0, 1e-9);
        let ideal = ideal_pulse([0.0, 0.0, 1.0], PI / 2.0, 0.3);
        for i in 0..3 {
            assert!((fine[i] - ideal[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn transverse_decay_reaches_e_inverse_at_t2() {
        let relax = RelaxationParams::new(1.0, 2e-4, 1.0);
        let m = evolve_delay([1.0, 0.0, 0.0], 2e-4, 0.0, &relax);
        assert_relative_eq!(m[0], (-1.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn longitudinal_recovery_closed_form() {
        let relax = RelaxationParams::new(5.54e-3, 1e-3, 1.0);
        let m = evolve_delay([0.0, 0.0, 0.0], 5.54e-3, 0.0, &relax);
        assert_relative_eq!(m[2], 0.632_120_558_8, max_relative = 1e-9);
    }

    #[test]
    fn detuned_delay_rotates_the_transverse_phase_clockwise() {
        // Δ·t = 1/4 cycle: +x → −y under m⊥ → m⊥·e^{−i2πΔt}
        let m = evolve_delay([1.0, 0.0, 0.0], 2.5e-4, 1e3, &RelaxationParams::default());
        assert!(m[0].abs() < 1e-12);
        assert_relative_eq!(m[1], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_rabi_pulse_is_a_delay() {
        let relax = RelaxationParams::new(3e-3, 1.5e-3, 1.0);
        let m0 = [0.6, -0.3, 0.4];
        let a = evolve_pulse(m0, 1e-3, 0.0, 0.0, 7.3e3, &relax).unwrap();
        let b = evolve_delay(m0, 1e-3, 7.3e3, &relax);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn operator_splitting_converges_at_second_order() {
        // driven nutation with relaxation: halving the step must cut the
        // error ~4x against a much finer reference
        let relax = RelaxationParams::new(4e-4, 2e-4, 1.0);
        let run = |steps: usize| {
            let mut m = [0.0, 0.0, 1.0];
            let duration = 2e-4;
            let dt = duration / steps as f64;
            for _ in 0..steps {
                m = relax_step(m, 0.5 * dt, &relax);
                m = nutation(m, 2.5e4, 0.0, 1e4, dt);
                m = relax_step(m, 0.5 * dt, &relax);
            }
            m
        };
        let reference = run(40_000);
        let err = |m: [f64; 3]| {
            (0..3)
                .map(|i| (m[i] - reference[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let coarse = err(run(100));
        let fine = err(run(200));
        assert!(coarse > 1e-12, "reference too close to coarse run");
        let order = (coarse / fine).log2();
        assert!(
            (1.7..=2.3).contains(&order),
            "convergence order {order}, errors {coarse:.3e}/{fine:.3e}"
        );
        // the production path with its step ≤ T2/100 rule lands at the
        // ~dt² ≈ 1e-4 level for this drive strength
        let split = evolve_pulse([0.0, 0.0, 1.0], 2e-4, 2.5e4, 0.0, 1e4, &relax).unwrap();
        assert!(err(split) < 1e-3, "split error {}", err(split));
    }

    #[test]
    fn trajectory_is_monotone_and_bounded() {
        let seq = PulseSequence {
            segments: vec![
                Segment::Pulse {
                    duration_s: 1e-6,
                    rabi_hz: 2.5e5,
                    phase_rad: 0.0,
                },
                Segment::Delay { duration_s: 5e-4 },
            ],
            acquisition_start_s: 1e-6,
            acquisition_length_s: 4e-4,
        };
        let relax = RelaxationParams::new(1e-3, 4e-4, 1.0);
        let traj = propagate_bloch(&seq, &relax, 2.0e4).unwrap();
        assert!(traj.times_s.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(
            traj.times_s.last().copied().unwrap(),
            seq.total_duration_s(),
            max_relative = 1e-12
        );
        for m in &traj.magnetization {
            assert!(norm(*m) <= 1.0 + 1e-9);
        }
        // the final state agrees with direct segment evolution to within the
        // splitting method error (the trajectory subdivides pulses finer, so
        // with relaxation the two second-order approximants differ at ~dt²)
        let m1 = evolve_pulse([0.0, 0.0, 1.0], 1e-6, 2.5e5, 0.0, 2.0e4, &relax).unwrap();
        let m2 = evolve_delay(m1, 5e-4, 2.0e4, &relax);
        let last = traj.magnetization.last().unwrap();
        for i in 0..3 {
            assert!((last[i] - m2[i]).abs() < 1e-3, "{last:?} vs {m2:?}");
        }
    }

    #[test]
    fn trajectory_without_relaxation_is_exact() {
        // rotations and free precession compose exactly, so subdividing
        // changes nothing without relaxation
        let seq = PulseSequence {
            segments: vec![
                Segment::Pulse {
                    duration_s: 1e-6,
                    rabi_hz: 2.5e5,
                    phase_rad: 0.7,
                },
                Segment::Delay { duration_s: 5e-4 },
            ],
            acquisition_start_s: 0.0,
            acquisition_length_s: 0.0,
        };
        let relax = RelaxationParams::default();
        let traj = propagate_bloch(&seq, &relax, 2.0e4).unwrap();
        let m1 = nutation([0.0, 0.0, 1.0], 2.5e5, 0.7, 2.0e4, 1e-6);
        let m2 = evolve_delay(m1, 5e-4, 2.0e4, &relax);
        let last = traj.magnetization.last().unwrap();
        for i in 0..3 {
            assert!((last[i] - m2[i]).abs() < 1e-12, "{last:?} vs {m2:?}");
        }
    }

    #[test]
    fn sequence_validation_rejects_bad_windows_and_durations() {
        let mut seq = PulseSequence {
            segments: vec![Segment::Delay { duration_s: 1e-3 }],
            acquisition_start_s: 0.0,
            acquisition_length_s: 2e-3,
        };
        assert!(seq.validate().is_err());
        seq.acquisition_length_s = 1e-3;
        assert!(seq.validate().is_ok());
        seq.segments.push(Segment::Delay { duration_s: 0.0 });
        assert!(seq.validate().is_err());
    }

    #[test]
    fn relaxation_validation_and_warnings() {
        assert!(RelaxationParams::new(0.0, 1.0, 1.0).validate().is_err());
        assert!(RelaxationParams::new(1.0, 1.0, 0.4).validate().is_err());
        assert!(RelaxationParams::new(1.0, 1.0, 3.5).validate().is_err());
        let suspect = RelaxationParams::new(1e-3, 3e-3, 1.0);
        assert!(suspect.validate().is_ok());
        assert_eq!(suspect.physical_warnings().len(), 1);
        assert!(RelaxationParams::default().physical_warnings().is_empty());
    }

    #[test]
    fn pulse_much_longer_than_t2_is_refused() {
        let relax = RelaxationParams::new(1.0, 1e-6, 1.0);
        let err = evolve_pulse([0.0, 0.0, 1.0], 1e3, 1e3, 0.0, 0.0, &relax);
        assert!(matches!(err, Err(PulseError::StepUnderflow { .. })));
    }

    #[test]
    fn echo_refocuses_completely_for_any_inhomogeneous_width() {
        for fwhm in [1e5, 1e6, 1e7, 1e8] {
            let trace =
                simulate_hahn_echo(2e-6, fwhm, &RelaxationParams::default(), 501).unwrap();
            assert!(
                (trace.echo_amplitude - 1.0).abs() < 1e-12,
                "fwhm {fwhm}: {}",
                trace.echo_amplitude
            );
            assert_relative_eq!(trace.echo_time_s, 4e-6, max_relative = 1e-15);
            let center = trace.m_perp[trace.m_perp.len() / 2];
            assert!((center - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn echo_shape_follows_the_lorentzian_free_decay() {
        // |⟨m⊥⟩|(t) = e^{−πΓ|t − 2τ|} for Lorentzian inhomogeneity
        let fwhm = 1e6;
        let trace = simulate_hahn_echo(2e-6, fwhm, &RelaxationParams::default(), 8001).unwrap();
        for (t, m) in trace.times_s.iter().zip(trace.m_perp.iter()) {
            let exact = (-PI * fwhm * (t - 4e-6).abs()).exp();
            assert!(
                (m.norm() - exact).abs() < 5e-3,
                "at offset {} ns: {} vs {exact}",
                (t - 4e-6) * 1e9,
                m.norm()
            );
            assert!(m.re.abs() < 1e-9); // symmetric detunings cancel in phase
        }
    }

    #[test]
    fn echo_envelope_matches_the_stretched_exponential() {
        let relax = RelaxationParams::new(f64::INFINITY, 117.3e-6, 2.1);
        for (tau, expect) in [
            (19e-6, 0.910_500_8),
            (68.5e-6, 0.250_214_0),
            (263.5e-6, 6.496_2e-11),
        ] {
            let trace = simulate_hahn_echo(tau, 0.0, &relax, 100).unwrap();
            assert_relative_eq!(trace.echo_amplitude, expect, max_relative = 1e-4);
        }
    }

    #[test]
    fn coincident_pulses_return_the_initial_coherence() {
        let trace = simulate_hahn_echo(0.0, 1e6, &RelaxationParams::default(), 100).unwrap();
        assert_eq!(trace.times_s, vec![0.0]);
        assert_relative_eq!(trace.echo_amplitude, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn echo_surfaces_accuracy_and_physicality_warnings() {
        let relax = RelaxationParams::new(1e-3, 3e-3, 1.0);
        let trace = simulate_hahn_echo(1e-6, 1e6, &relax, 50).unwrap();
        assert!(trace.warnings.iter().any(|w| w.contains("below 100")));
        assert!(trace.warnings.iter().any(|w| w.contains("2·t1")));
        assert!(simulate_hahn_echo(1e-6, 1e6, &relax, 1).is_err());
        assert!(simulate_hahn_echo(-1.0, 1e6, &relax, 100).is_err());
    }

    #[test]
    fn recovery_model_limits_and_fixed_point() {
        assert_eq!(saturation_recovery_model(0.0, 5.54e-3, 2.0), 0.0);
        assert_relative_eq!(
            saturation_recovery_model(1.0, 5.54e-3, 2.0),
            2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            saturation_recovery_model(5.54e-3, 5.54e-3, 1.0),
            0.632_120_558_8,
            max_relative = 1e-9
        );
    }

    #[test]
    fn decay_model_limits_and_stretch_invariant_point() {
        assert_eq!(echo_decay_model(0.0, 117.3e-6, 2.1, 3.0), 3.0);
        for p in [0.5, 1.0, 2.1, 3.0] {
            assert_relative_eq!(
                echo_decay_model(117.3e-6, 117.3e-6, p, 1.0),
                (-1.0f64).exp(),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            echo_decay_model(137e-6, 117.3e-6, 2.1, 1.0),
            0.250_213_97,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            echo_decay_model(527e-6, 117.3e-6, 2.1, 1.0),
            6.496_2e-11,
            max_relative = 1e-3
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn rotations_preserve_the_norm(
            mx in -1.0f64..1.0, my in -1.0f64..1.0, mz in -1.0f64..1.0,
            rabi in 0.0f64..1e7, phase in -3.2f64..3.2,
            det in -1e7f64..1e7, dur in 0.0f64..1e-5,
        ) {
            let m = [mx, my, mz];
            let r = nutation(m, rabi, phase, det, dur);
            prop_assert!((norm(r) - norm(m)).abs() < 1e-12);
        }

        #[test]
        fn magnetization_stays_inside_the_bloch_ball(
            t1 in 1e-5f64..1e-2,
            t2_frac in 0.05f64..1.0,
            rabi in 0.0f64..1e6,
            det in -1e6f64..1e6,
            p_dur in 1e-7f64..1e-4,
            d_dur in 1e-6f64..1e-3,
            eq in -1.0f64..1.0,
        ) {
            // within the physical bound t2 ≤ 2·t1 the Bloch flow contracts
            let relax = RelaxationParams {
                t1_s: t1,
                t2_s: 2.0 * t1 * t2_frac,
                stretch_p: 1.0,
                equilibrium_mz: eq,
            };
            let seq = PulseSequence {
                segments: vec![
                    Segment::Pulse { duration_s: p_dur, rabi_hz: rabi, phase_rad: 0.4 },
                    Segment::Delay { duration_s: d_dur },
                    Segment::Pulse { duration_s: p_dur, rabi_hz: rabi, phase_rad: -1.1 },
                ],
                acquisition_start_s: 0.0,
                acquisition_length_s: 0.0,
            };
            let traj = propagate_bloch(&seq, &relax, det).unwrap();
            for m in &traj.magnetization {
                prop_assert!(norm(*m) <= 1.0 + 1e-9, "|M| = {}", norm(*m));
            }
        }
    }
}
