//! Resonator–spin design arithmetic: zero-point field, mode volume,
//! single-spin and collective coupling rates, spin counting, and an
//! internal-Q loss budget.
//!
//! Everything here is closed-form bookkeeping. Electromagnetic quantities
//! that require a field solver (radiation Q versus enclosure geometry,
//! filling factors, field homogeneity) are *inputs*, so simulated or
//! measured values can be budgeted without this crate caring where they
//! came from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{DIAMOND_CARBON_DENSITY, K_B, MU_0, MU_B_OVER_H, N_A, PLANCK_H};

/// Relative permittivity of rutile perpendicular to the c-axis at 4 K.
pub const RUTILE_EPSILON_PERP: f64 = 130.0;
/// Relative permittivity of rutile along the c-axis at 4 K.
pub const RUTILE_EPSILON_PAR: f64 = 255.0;
/// Molar mass of 2,2-diphenyl-1-picrylhydrazyl in g/mol.
pub const DPPH_MOLAR_MASS_G_MOL: f64 = 394.32;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid design input: {0}")]
    Invalid(String),
}

fn require_positive(name: &str, value: f64) -> Result<(), DesignError> {
    if !(value > 0.0) {
        return Err(DesignError::Invalid(format!(
            "{name} must be positive, got {value}"
        )));
    }
    Ok(())
}

fn require_fraction(name: &str, value: f64) -> Result<(), DesignError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(DesignError::Invalid(format!(
            "{name} must lie in [0, 1], got {value}"
        )));
    }
    Ok(())
}

/// Root-mean-square vacuum magnetic field of a mode at `omega_r_hz`
/// confined to `mode_volume_m3`:
///
/// B_vac = sqrt(mu0 * h * f_r / (2 V))
///
/// i.e. the zero-point energy h·f_r/2 split evenly between electric and
/// magnetic energy, with the magnetic half spread over the mode volume.
pub fn vacuum_field(omega_r_hz: f64, mode_volume_m3: f64) -> Result<f64, DesignError> {
    require_positive("omega_r_hz", omega_r_hz)?;
    require_positive("mode_volume_m3", mode_volume_m3)?;
    Ok((MU_0 * PLANCK_H * omega_r_hz / (2.0 * mode_volume_m3)).sqrt())
}

/// Inverse of [`vacuum_field`]: the effective mode volume implied by a
/// vacuum field amplitude.
pub fn mode_volume(omega_r_hz: f64, b_vac_t: f64) -> Result<f64, DesignError> {
    require_positive("omega_r_hz", omega_r_hz)?;
    require_positive("b_vac_t", b_vac_t)?;
    Ok(MU_0 * PLANCK_H * omega_r_hz / (2.0 * b_vac_t * b_vac_t))
}

/// Coupling rate of a single spin-1/2 sitting in the vacuum field, in Hz:
/// g_single = (g μ_B / h) · B_vac / 2. The factor 1/2 is the transverse
/// spin matrix element |⟨↓|S_x|↑⟩|.
pub fn single_spin_coupling(b_vac_t: f64, g_factor: f64) -> Result<f64, DesignError> {
    if b_vac_t < 0.0 {
        return Err(DesignError::Invalid(format!(
            "b_vac_t must be nonnegative, got {b_vac_t}"
        )));
    }
    require_positive("g_factor", g_factor)?;
    Ok(g_factor * MU_B_OVER_H * b_vac_t / 2.0)
}

/// Collective coupling of `n_spins` identical spins with thermal
/// `polarization` ∈ [0, 1]: g_ens = g_single · sqrt(N · polarization).
pub fn ensemble_coupling(
    g_single_hz: f64,
    n_spins: f64,
    polarization: f64,
) -> Result<f64, DesignError> {
    if g_single_hz < 0.0 || n_spins < 0.0 {
        return Err(DesignError::Invalid(format!(
            "coupling and spin number must be nonnegative, got {g_single_hz} and {n_spins}"
        )));
    }
    require_fraction("polarization", polarization)?;
    Ok(g_single_hz * (n_spins * polarization).sqrt())
}

/// Thermal ground-state polarization of a two-level system split by
/// `omega_hz`: tanh(h f / 2 k_B T). Nonpositive temperatures saturate to 1.
pub fn thermal_polarization(omega_hz: f64, temperature_k: f64) -> f64 {
    if temperature_k <= 0.0 {
        return 1.0;
    }
    (PLANCK_H * omega_hz / (2.0 * K_B * temperature_k)).tanh()
}

/// What is in the sample holder, for spin counting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "species", rename_all = "lowercase")]
pub enum SampleSpec {
    /// Substitutional nitrogen in diamond, specified as an atomic
    /// concentration relative to the carbon host.
    P1 {
        concentration_ppm: f64,
        /// Host atom number density in m⁻³.
        #[serde(default = "default_host_density")]
        host_density_m3: f64,
        volume_m3: f64,
    },
    /// Powdered radical sample, one unpaired electron per molecule by
    /// default.
    Dpph {
        mass_g: f64,
        #[serde(default = "default_dpph_molar_mass")]
        molar_mass_g_mol: f64,
        #[serde(default = "default_spins_per_molecule")]
        spins_per_molecule: f64,
    },
}

fn default_host_density() -> f64 {
    DIAMOND_CARBON_DENSITY
}

fn default_dpph_molar_mass() -> f64 {
    DPPH_MOLAR_MASS_G_MOL
}

fn default_spins_per_molecule() -> f64 {
    1.0
}

/// Number of paramagnetic spins described by `spec`.
pub fn spin_count(spec: &SampleSpec) -> Result<f64, DesignError> {
    match spec {
        SampleSpec::P1 {
            concentration_ppm,
            host_density_m3,
            volume_m3,
        } => {
            if !(0.0..=1e6).contains(concentration_ppm) {
                return Err(DesignError::Invalid(format!(
                    "concentration_ppm must lie in [0, 1e6], got {concentration_ppm}"
                )));
            }
            require_positive("host_density_m3", *host_density_m3)?;
            require_positive("volume_m3", *volume_m3)?;
            Ok(concentration_ppm * 1e-6 * host_density_m3 * volume_m3)
        }
        SampleSpec::Dpph {
            mass_g,
            molar_mass_g_mol,
            spins_per_molecule,
        } => {
            if *mass_g < 0.0 || *spins_per_molecule < 0.0 {
                return Err(DesignError::Invalid(format!(
                    "mass and spins per molecule must be nonnegative, got {mass_g} and {spins_per_molecule}"
                )));
            }
            require_positive("molar_mass_g_mol", *molar_mass_g_mol)?;
            Ok(mass_g / molar_mass_g_mol * N_A * spins_per_molecule)
        }
    }
}

/// Electromagnetic design point of a dielectric resonator.
///
/// `b_vac_t` and `mode_volume_m3` are redundant given `omega_r_hz`
/// (related by the zero-point relation); build with
/// [`DesignParams::resolve_field_volume`] to fill in whichever one was not
/// specified, and [`DesignParams::validate`] checks they stay consistent.
///
/// The permittivities and the magnetic filling factor are carried as
/// material/mode documentation; only the *electric* filling factor enters
/// the dielectric term of the loss budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignParams {
    pub omega_r_hz: f64,
    /// RMS vacuum magnetic field at the sample, tesla.
    pub b_vac_t: f64,
    pub mode_volume_m3: f64,
    pub epsilon_perp: f64,
    pub epsilon_par: f64,
    /// Dielectric loss tangent of the resonator material.
    pub tan_delta: f64,
    /// Fraction of the electric energy stored in the dielectric.
    pub electric_filling: f64,
    /// Fraction of the magnetic energy stored in the dielectric.
    pub magnetic_filling: f64,
    pub q_radiation: f64,
    pub q_conductor: f64,
}

impl DesignParams {
    /// Derive the redundant member of the (vacuum field, mode volume) pair.
    /// Exactly one must be given.
    pub fn resolve_field_volume(
        omega_r_hz: f64,
        b_vac_t: Option<f64>,
        mode_volume_m3: Option<f64>,
    ) -> Result<(f64, f64), DesignError> {
        match (b_vac_t, mode_volume_m3) {
            (Some(b), None) => Ok((b, mode_volume(omega_r_hz, b)?)),
            (None, Some(v)) => Ok((vacuum_field(omega_r_hz, v)?, v)),
            (Some(_), Some(_)) => Err(DesignError::Invalid(
                "give either the vacuum field or the mode volume, not both".into(),
            )),
            (None, None) => Err(DesignError::Invalid(
                "one of the vacuum field and the mode volume is required".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        require_positive("omega_r_hz", self.omega_r_hz)?;
        require_positive("b_vac_t", self.b_vac_t)?;
        require_positive("mode_volume_m3", self.mode_volume_m3)?;
        require_positive("epsilon_perp", self.epsilon_perp)?;
        require_positive("epsilon_par", self.epsilon_par)?;
        if self.tan_delta < 0.0 {
            return Err(DesignError::Invalid(format!(
                "tan_delta must be nonnegative, got {}",
                self.tan_delta
            )));
        }
        require_fraction("electric_filling", self.electric_filling)?;
        require_fraction("magnetic_filling", self.magnetic_filling)?;
        // Infinite Q means the channel is absent; that is fine.
        require_positive("q_radiation", self.q_radiation)?;
        require_positive("q_conductor", self.q_conductor)?;
        let b_implied = vacuum_field(self.omega_r_hz, self.mode_volume_m3)?;
        if (b_implied - self.b_vac_t).abs() > 1e-6 * self.b_vac_t {
            return Err(DesignError::Invalid(format!(
                "vacuum field {} T is inconsistent with mode volume {} m³ (implies {} T)",
                self.b_vac_t, self.mode_volume_m3, b_implied
            )));
        }
        Ok(())
    }
}

/// Internal quality factor decomposed by loss channel.
///
/// The fractions report each channel's share of 1/Q_int and sum to one.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossBudget {
    pub q_int: f64,
    pub dielectric_fraction: f64,
    pub conductor_fraction: f64,
    pub radiation_fraction: f64,
}

/// Sum the loss channels:
///
/// 1/Q_int = p_e · tanδ + 1/Q_conductor + 1/Q_radiation
///
/// where p_e is the electric filling factor of the dielectric. Errors if
/// every channel is lossless (Q_int would be unbounded and the breakdown
/// undefined).
pub fn loss_budget(params: &DesignParams) -> Result<LossBudget, DesignError> {
    params.validate()?;
    let dielectric = params.electric_filling * params.tan_delta;
    let conductor = 1.0 / params.q_conductor;
    let radiation = 1.0 / params.q_radiation;
    let total = dielectric + conductor + radiation;
    if total <= 0.0 {
        return Err(DesignError::Invalid(
            "all loss channels are zero; Q_int is unbounded".into(),
        ));
    }
    Ok(LossBudget {
        q_int: 1.0 / total,
        dielectric_fraction: dielectric / total,
        conductor_fraction: conductor / total,
        radiation_fraction: radiation / total,
    })
}
