//! Physical constants (CODATA 2018 exact/recommended values), SI units.

/// Bohr magneton, J/T.
pub const MU_B: f64 = 9.274_010_078_3e-24;

/// Planck constant, J·s (exact).
pub const PLANCK_H: f64 = 6.626_070_15e-34;

/// Vacuum magnetic permeability, N/A².
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Boltzmann constant, J/K (exact).
pub const K_B: f64 = 1.380_649e-23;

/// Avogadro constant, 1/mol (exact).
pub const N_A: f64 = 6.022_140_76e23;

/// μ_B/h, Hz/T: ESR frequency per unit field and unit g-factor.
pub const MU_B_OVER_H: f64 = MU_B / PLANCK_H;

/// Number density of carbon atoms in diamond, m⁻³.
pub const DIAMOND_CARBON_DENSITY: f64 = 1.77e29;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_b_over_h_is_about_14_ghz_per_tesla() {
        assert!((MU_B_OVER_H - 1.399_624_493e10).abs() < 1e3);
    }
}
