//! Spin Hamiltonians: hyperfine structure, ESR transition frequencies and
//! transition matrix elements versus applied static field.
//!
//! The Hamiltonian is H/h = γ_e **B**·**S** + **S**·𝒜·**I** with everything
//! expressed in Hz (γ_e = g·μ_B/h). The hyperfine tensor 𝒜 is axially
//! symmetric about [`SpinSystem::symmetry_axis`]: diag(A⊥, A⊥, A∥) in the
//! defect frame. The nuclear Zeeman term is omitted — its sub-MHz effect at
//! the fields of interest is below typical linewidth resolution.

use crate::constants::MU_B_OVER_H;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default substitutional-nitrogen (P1) hyperfine component ⊥ to the defect
/// axis, Hz.
pub const P1_HYPERFINE_PERP_HZ: f64 = 114.03e6;
/// Default P1 hyperfine component along the defect axis, Hz.
pub const P1_HYPERFINE_PAR_HZ: f64 = 81.33e6;
/// Literature electron g-factor for the P1 center.
pub const P1_G_FACTOR: f64 = 2.0024;
/// Literature electron g-factor for DPPH.
pub const DPPH_G_FACTOR: f64 = 2.0036;

/// Matrix elements at or above this value count as "strong" (allowed) lines;
/// the nuclear-spin-conserving transitions sit near 1, everything else well
/// below 0.1 in the regimes this crate targets.
pub const STRONG_LINE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SpinError {
    #[error("field magnitude must be nonnegative, got {0}")]
    NegativeField(f64),
    #[error("vector [{0}, {1}, {2}] is not unit length")]
    NotUnit(f64, f64, f64),
    #[error("zero-length direction vector")]
    ZeroVector,
    #[error("invalid spin system: {0}")]
    InvalidSystem(String),
    #[error("no {label} transition crosses {target_hz} Hz for fields in (0, {bracket_t}] T")]
    CrossingNotFound {
        label: Manifold,
        target_hz: f64,
        bracket_t: f64,
    },
}

fn normalized(v: [f64; 3]) -> Result<[f64; 3], SpinError> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n > 1e-300) || !n.is_finite() {
        return Err(SpinError::ZeroVector);
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

fn check_unit(v: [f64; 3]) -> Result<(), SpinError> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(SpinError::NotUnit(v[0], v[1], v[2]));
    }
    Ok(())
}

/// An electron spin S = 1/2 hyperfine-coupled to one nucleus of spin
/// I ∈ {0, 1/2, 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    /// Electron g-factor (> 0).
    pub g_factor: f64,
    /// Nuclear spin quantum number: 0, 1/2 or 1.
    pub nuclear_spin: f64,
    /// Hyperfine component perpendicular to the symmetry axis, Hz.
    pub hyperfine_perp_hz: f64,
    /// Hyperfine component along the symmetry axis, Hz.
    pub hyperfine_par_hz: f64,
    /// Defect symmetry axis, unit vector in the crystal frame.
    pub symmetry_axis: [f64; 3],
}

impl SpinSystem {
    pub fn new(
        g_factor: f64,
        nuclear_spin: f64,
        hyperfine_perp_hz: f64,
        hyperfine_par_hz: f64,
        symmetry_axis: [f64; 3],
    ) -> Result<Self, SpinError> {
        let sys = SpinSystem {
            g_factor,
            nuclear_spin,
            hyperfine_perp_hz,
            hyperfine_par_hz,
            symmetry_axis: normalized(symmetry_axis)?,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Free electron spin: no nucleus, no hyperfine coupling.
    pub fn free_spin(g_factor: f64) -> Self {
        SpinSystem {
            g_factor,
            nuclear_spin: 0.0,
            hyperfine_perp_hz: 0.0,
            hyperfine_par_hz: 0.0,
            symmetry_axis: [0.0, 0.0, 1.0],
        }
    }

    /// DPPH radical (S = 1/2, I = 0) with its literature g-factor.
    pub fn dpph() -> Self {
        Self::free_spin(DPPH_G_FACTOR)
    }

    /// Diamond P1 center with the ¹⁴N hyperfine tensor along one of the four
    /// ⟨111⟩ axes.
    pub fn p1(symmetry_axis: [f64; 3]) -> Result<Self, SpinError> {
        Self::new(
            P1_G_FACTOR,
            1.0,
            P1_HYPERFINE_PERP_HZ,
            P1_HYPERFINE_PAR_HZ,
            symmetry_axis,
        )
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.g_factor > 0.0) {
            return Err(SpinError::InvalidSystem(format!(
                "g_factor must be positive, got {}",
                self.g_factor
            )));
        }
        if self.hyperfine_perp_hz < 0.0 || self.hyperfine_par_hz < 0.0 {
            return Err(SpinError::InvalidSystem(
                "hyperfine components must be nonnegative".into(),
            ));
        }
        if self.two_i().is_none() {
            return Err(SpinError::InvalidSystem(format!(
                "nuclear_spin must be 0, 1/2 or 1, got {}",
                self.nuclear_spin
            )));
        }
        check_unit(self.symmetry_axis)
    }

    fn two_i(&self) -> Option<u8> {
        let t = 2.0 * self.nuclear_spin;
        if t == 0.0 || t == 1.0 || t == 2.0 {
            Some(t as u8)
        } else {
            None
        }
    }

    /// Hilbert-space dimension 2(2I + 1).
    pub fn dim(&self) -> usize {
        2 * (self.two_i().map_or(1, |t| t as usize) + 1)
    }
}

/// Static applied field: magnitude and direction in the crystal frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub magnitude_t: f64,
    pub direction: [f64; 3],
}

impl FieldPoint {
    /// Field of the given magnitude along `direction` (normalized here).
    pub fn along(magnitude_t: f64, direction: [f64; 3]) -> Result<Self, SpinError> {
        if magnitude_t < 0.0 {
            return Err(SpinError::NegativeField(magnitude_t));
        }
        Ok(FieldPoint {
            magnitude_t,
            direction: normalized(direction)?,
        })
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if self.magnitude_t < 0.0 {
            return Err(SpinError::NegativeField(self.magnitude_t));
        }
        check_unit(self.direction)
    }
}

/// Nuclear-manifold tag of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Manifold {
    /// Free-electron line (I = 0).
    Electron,
    /// Nuclear manifold identified by 2·m_I (integer for any I ≤ 1).
    Mi2(i8),
}

impl Manifold {
    /// Tag for an integer m_I (I = 1 systems).
    pub fn mi(m_i: i8) -> Self {
        Manifold::Mi2(2 * m_i)
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Electron => write!(f, "electron"),
            Manifold::Mi2(t) if t % 2 == 0 => write!(f, "m_I={:+}", t / 2),
            Manifold::Mi2(t) => write!(f, "m_I={:+}/2", t),
        }
    }
}

/// One ESR transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub frequency_hz: f64,
    /// Drive matrix element, normalized so a free-spin π transition gives 1.
    pub matrix_element: f64,
    pub label: Manifold,
}

/// All transitions at one field point, sorted by frequency.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionSet {
    pub transitions: Vec<Transition>,
    /// True when some eigenvalue gap is below 1 Hz, making the manifold
    /// labels unreliable.
    pub ambiguous_labels: bool,
    pub warnings: Vec<String>,
}

impl TransitionSet {
    /// Strong (allowed) lines: matrix element ≥ [`STRONG_LINE_THRESHOLD`].
    pub fn strong(&self) -> Vec<&Transition> {
        self.transitions
            .iter()
            .filter(|t| t.matrix_element >= STRONG_LINE_THRESHOLD)
            .collect()
    }

    /// The strongest line carrying the given manifold label.
    pub fn manifold_line(&self, label: Manifold) -> Option<&Transition> {
        self.transitions
            .iter()
            .filter(|t| t.label == label)
            .max_by(|a, b| a.matrix_element.total_cmp(&b.matrix_element))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TransitionOptions {
    /// Matrix-element cutoff below which lines are dropped.
    pub threshold: f64,
    /// Keep every pair regardless of matrix element.
    pub include_weak: bool,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        TransitionOptions {
            threshold: 1e-3,
            include_weak: false,
        }
    }
}

/// Free-spin ESR frequency g·μ_B·B/h.
pub fn zeeman_transition(g_factor: f64, field_t: f64) -> Result<f64, SpinError> {
    if field_t < 0.0 {
        return Err(SpinError::NegativeField(field_t));
    }
    Ok(g_factor * MU_B_OVER_H * field_t)
}

/// Angular-momentum matrices (Jx, Jy, Jz) for 2j = `two_j`, in the basis
/// |j, m⟩ with m descending.
fn angular_momentum(two_j: u8) -> [DMatrix<Complex64>; 3] {
    let dim = two_j as usize + 1;
    let j = two_j as f64 / 2.0;
    let mut jz = DMatrix::<Complex64>::zeros(dim, dim);
    let mut jp = DMatrix::<Complex64>::zeros(dim, dim);
    for k in 0..dim {
        let m = j - k as f64;
        jz[(k, k)] = Complex64::new(m, 0.0);
        if k > 0 {
            jp[(k - 1, k)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm).scale(0.5);
    let jy = (&jp - &jm) * Complex64::new(0.0, -0.5);
    [jx, jy, jz]
}

/// Assemble H/h in Hz in the product basis |m_S⟩ ⊗ |m_I⟩ (both descending).
pub fn build_hamiltonian(
    sys: &SpinSystem,
    field: &FieldPoint,
) -> Result<DMatrix<Complex64>, SpinError> {
    sys.validate()?;
    field.validate()?;
    let two_i = sys.two_i().expect("validated");
    let ni = two_i as usize + 1;
    let s_ops = angular_momentum(1);
    let i_ops = angular_momentum(two_i);
    let id_n = DMatrix::<Complex64>::identity(ni, ni);

    let gamma = sys.g_factor * MU_B_OVER_H;
    let b = field.direction.map(|c| c * field.magnitude_t);
    let n = sys.symmetry_axis;
    let da = sys.hyperfine_par_hz - sys.hyperfine_perp_hz;

    let mut h = DMatrix::<Complex64>::zeros(2 * ni, 2 * ni);
    for i in 0..3 {
        h += s_ops[i].kronecker(&id_n).scale(gamma * b[i]);
        for j in 0..3 {
            let a_ij = if i == j { sys.hyperfine_perp_hz } else { 0.0 } + da * n[i] * n[j];
            if a_ij != 0.0 {
                h += s_ops[i].kronecker(&i_ops[j]).scale(a_ij);
            }
        }
    }
    Ok(h)
}

/// Eigenvalues (ascending) and matching eigenvector columns.
fn eigensystem(h: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let dim = h.nrows();
    let mut vecs = DMatrix::<Complex64>::zeros(dim, dim);
    for (new, &old) in order.iter().enumerate() {
        vecs.set_column(new, &eig.eigenvectors.column(old));
    }
    (vals, vecs)
}

/// ESR transitions under a linearly polarized drive along `drive_axis`.
pub fn transitions(
    sys: &SpinSystem,
    field: &FieldPoint,
    drive_axis: [f64; 3],
) -> Result<TransitionSet, SpinError> {
    transitions_with(sys, field, drive_axis, &TransitionOptions::default())
}

pub fn transitions_with(
    sys: &SpinSystem,
    field: &FieldPoint,
    drive_axis: [f64; 3],
    opts: &TransitionOptions,
) -> Result<TransitionSet, SpinError> {
    let drive = normalized(drive_axis)?;
    let h = build_hamiltonian(sys, field)?;
    let mut warnings = Vec::new();
    let dot: f64 = drive
        .iter()
        .zip(field.direction.iter())
        .map(|(a, b)| a * b)
        .sum();
    if dot.abs() > 1e-9 {
        warnings.push(format!(
            "drive axis is not perpendicular to the field (cos angle = {dot:.3e})"
        ));
    }

    let (vals, vecs) = eigensystem(&h);
    let dim = vals.len();
    let ni = dim / 2;
    let two_i = (ni - 1) as i8;

    let ambiguous_labels = vals.windows(2).any(|w| (w[1] - w[0]).abs() < 1.0);

    // dominant product-basis component → (m_S sign irrelevant, 2·m_I)
    let mi2_of: Vec<i8> = (0..dim)
        .map(|col| {
            let v = vecs.column(col);
            let idx = (0..dim)
                .max_by(|&a, &b| v[a].norm_sqr().total_cmp(&v[b].norm_sqr()))
                .expect("nonzero dimension");
            two_i - 2 * (idx % ni) as i8
        })
        .collect();

    let s_ops = angular_momentum(1);
    let id_n = DMatrix::<Complex64>::identity(ni, ni);
    let mut s_drive = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..3 {
        s_drive += s_ops[i].kronecker(&id_n).scale(drive[i]);
    }

    let mut list = Vec::new();
    for a in 0..dim {
        for b in (a + 1)..dim {
            let mel = 2.0 * vecs.column(b).dotc(&(&s_drive * vecs.column(a))).norm();
            if !opts.include_weak && mel < opts.threshold {
                continue;
            }
            let label = if two_i == 0 {
                Manifold::Electron
            } else {
                Manifold::Mi2(mi2_of[a])
            };
            list.push(Transition {
                frequency_hz: vals[b] - vals[a],
                matrix_element: mel,
                label,
            });
        }
    }
    list.sort_by(|x, y| x.frequency_hz.total_cmp(&y.frequency_hz));
    Ok(TransitionSet {
        transitions: list,
        ambiguous_labels,
        warnings,
    })
}

fn any_perpendicular(dir: [f64; 3]) -> [f64; 3] {
    let cand = if dir[2].abs() < 0.9 {
        [dir[1], -dir[0], 0.0] // dir × ẑ
    } else {
        [0.0, dir[2], -dir[1]] // dir × x̂
    };
    normalized(cand).expect("perpendicular of a unit vector is nonzero")
}

const FIELD_BRACKET_T: f64 = 2.0;
const BRACKET_STEPS: usize = 100;

/// Field at which the labeled transition crosses `target_hz`, searched over
/// (0, 2 T]. The transition is assumed monotonic in field over the bracket.
pub fn resonance_field(
    sys: &SpinSystem,
    target_hz: f64,
    direction: [f64; 3],
    label: Manifold,
) -> Result<f64, SpinError> {
    let dir = normalized(direction)?;
    let drive = any_perpendicular(dir);
    let not_found = || SpinError::CrossingNotFound {
        label,
        target_hz,
        bracket_t: FIELD_BRACKET_T,
    };
    let line = |b_t: f64| -> Option<f64> {
        let field = FieldPoint {
            magnitude_t: b_t,
            direction: dir,
        };
        transitions(sys, &field, drive)
            .ok()?
            .manifold_line(label)
            .map(|t| t.frequency_hz)
    };

    // coarse scan for a sign change, then bisection
    let step = FIELD_BRACKET_T / BRACKET_STEPS as f64;
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for k in 1..=BRACKET_STEPS {
        let b = k as f64 * step;
        let Some(f) = line(b) else {
            prev = None;
            continue;
        };
        if let Some((pb, pf)) = prev {
            if (pf - target_hz) * (f - target_hz) <= 0.0 {
                bracket = Some((pb, pf, b, f));
                break;
            }
        }
        prev = Some((b, f));
    }
    let (mut lo, mut f_lo, mut hi, _) = bracket.ok_or_else(not_found)?;

    for _ in 0..80 {
        if hi - lo < 1e-11 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let Some(f_mid) = line(mid) else {
            return Err(not_found());
        };
        if (f_lo - target_hz) * (f_mid - target_hz) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    let root = 0.5 * (lo + hi);
    match line(root) {
        Some(f) if (f - target_hz).abs() < 1e3 => Ok(root),
        _ => Err(not_found()),
    }
}
