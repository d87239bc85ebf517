//! Release gate: twelve end-to-end checks over the whole analysis chain,
//! each pinned to its published tolerance and reporting one PASS line.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spinres::cavity::{
    cooperativity, dressed_frequencies, fwhm_of_samples, invert_spin_distribution, reflection_bare,
    reflection_coupled, trapezoid, ComplexTrace, EnsembleParams, Regime, ResonatorParams, Trace,
};
use spinres::constants::MU_B_OVER_H;
use spinres::design::{loss_budget, single_spin_coupling, DesignParams};
use spinres::fit::{
    fit_avoided_crossing, fit_coupled_spectrum, fit_resonator, fit_t1, fit_t2, sweep_map,
    CouplingRegime, CrossingLine, CrossingOptions, FitResult,
};
use spinres::pulse::{
    echo_decay_model, saturation_recovery_model, simulate_hahn_echo, RelaxationParams,
};
use spinres::spin::{resonance_field, transitions, FieldPoint, Manifold, SpinSystem};

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Every accepted optimizer step must lower the cost.
fn assert_monotone(result: &FitResult, what: &str) {
    assert!(
        result.cost_history.windows(2).all(|w| w[1] <= w[0]),
        "{what}: cost history is not monotone: {:?}",
        result.cost_history
    );
}

#[test]
fn a01_cooperativity_of_dpph_rates() {
    let (c, regime) = cooperativity(7.8e6, 1.7e6, 9.6e6).unwrap();
    assert!((c - 3.73).abs() <= 0.01, "C = {c}");
    assert_eq!(regime, Regime::HighCooperativity);
    println!("PASS 1/12 cooperativity(7.8, 1.7, 9.6 MHz) = {c:.4} (want 3.73 +- 0.01)");
}

#[test]
fn a02_single_spin_coupling_from_vacuum_field() {
    let g = single_spin_coupling(5.0e-12, 2.0).unwrap();
    assert!((g - 0.070).abs() <= 0.002, "g_single = {g}");
    println!("PASS 2/12 single-spin coupling at 5.0 pT = {g:.5} Hz (want 0.070 +- 0.002)");
}

#[test]
fn a03_internal_rate_from_quality_factor() {
    let omega_r: f64 = 5.534e9;
    let kappa_int = omega_r / 2.30e4;
    assert!((kappa_int - 240.6e3).abs() <= 0.1e3, "kappa_int = {kappa_int}");
    let res = ResonatorParams::new(omega_r, kappa_int, 1.0e6);
    assert!((res.q_int() - 2.30e4).abs() <= 1e-9 * 2.30e4);
    println!(
        "PASS 3/12 Q_int = 2.30e4 at 5.534 GHz gives kappa_int = {:.1} kHz (want 240.6 +- 0.1)",
        kappa_int / 1e3
    );
}

// ---- independent 6x6 oracle for the hyperfine spectrum ----

type CMat = Vec<Vec<Complex64>>;

fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca, rb, cb) = (a.len(), a[0].len(), b.len(), b[0].len());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); ca * cb]; ra * rb];
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[i * rb + k][j * cb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn mat_add_scaled(acc: &mut CMat, m: &CMat, s: f64) {
    for (ra, rm) in acc.iter_mut().zip(m) {
        for (a, b) in ra.iter_mut().zip(rm) {
            *a += b * s;
        }
    }
}

fn dot3(ops: &[CMat; 3], n: [f64; 3], dim: usize) -> CMat {
    let mut out = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for a in 0..3 {
        mat_add_scaled(&mut out, &ops[a], n[a]);
    }
    out
}

/// Electron Zeeman plus axial hyperfine for S = 1/2, I = 1, assembled from
/// raw spin matrices; energies in Hz.
fn oracle_hamiltonian(sys: &SpinSystem, b_t: f64, dir: [f64; 3]) -> CMat {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let s_ops: [CMat; 3] = [
        vec![vec![c(0.0, 0.0), c(0.5, 0.0)], vec![c(0.5, 0.0), c(0.0, 0.0)]],
        vec![vec![c(0.0, 0.0), c(0.0, -0.5)], vec![c(0.0, 0.5), c(0.0, 0.0)]],
        vec![vec![c(0.5, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-0.5, 0.0)]],
    ];
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let i_ops: [CMat; 3] = [
        vec![
            vec![c(0.0, 0.0), c(r, 0.0), c(0.0, 0.0)],
            vec![c(r, 0.0), c(0.0, 0.0), c(r, 0.0)],
            vec![c(0.0, 0.0), c(r, 0.0), c(0.0, 0.0)],
        ],
        vec![
            vec![c(0.0, 0.0), c(0.0, -r), c(0.0, 0.0)],
            vec![c(0.0, r), c(0.0, 0.0), c(0.0, -r)],
            vec![c(0.0, 0.0), c(0.0, r), c(0.0, 0.0)],
        ],
        vec![
            vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)],
        ],
    ];
    let id3: CMat = (0..3)
        .map(|i| (0..3).map(|j| c((i == j) as u8 as f64, 0.0)).collect())
        .collect();

    let mut h = vec![vec![c(0.0, 0.0); 6]; 6];
    let gamma = sys.g_factor * MU_B_OVER_H;
    for a in 0..3 {
        mat_add_scaled(&mut h, &kron(&s_ops[a], &id3), gamma * b_t * dir[a]);
        mat_add_scaled(&mut h, &kron(&s_ops[a], &i_ops[a]), sys.hyperfine_perp_hz);
    }
    let n = sys.symmetry_axis;
    let ns = dot3(&s_ops, n, 2);
    let ni = dot3(&i_ops, n, 3);
    mat_add_scaled(
        &mut h,
        &kron(&ns, &ni),
        sys.hyperfine_par_hz - sys.hyperfine_perp_hz,
    );
    h
}

/// Eigenvalues of a complex Hermitian matrix through the doubled real
/// embedding [[Re, -Im], [Im, Re]] and plain cyclic Jacobi rotations.
fn hermitian_eigenvalues(h: &CMat) -> Vec<f64> {
    let n = h.len();
    let mut a = vec![vec![0.0f64; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = h[i][j].re;
            a[i][j + n] = -h[i][j].im;
            a[i + n][j] = h[i][j].im;
            a[i + n][j + n] = h[i][j].re;
        }
    }
    let dim = 2 * n;
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-300);
    for _sweep in 0..200 {
        let off: f64 = (0..dim)
            .flat_map(|p| ((p + 1)..dim).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() < 1e-14 * scale * dim as f64 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..dim {
                    let arp = a[r][p];
                    let arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..dim {
                    let apr = a[p][r];
                    let aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..dim).map(|k| a[k][k]).collect();
    vals.sort_by(f64::total_cmp);
    vals.into_iter().step_by(2).collect()
}

#[test]
fn a04_nitrogen_hyperfine_spectrum_structure() {
    let b = 0.198;
    let dir = [0.0, 0.0, 1.0];
    let drive = [1.0, 0.0, 0.0];
    let sys = SpinSystem::p1([1.0, 1.0, 1.0]).unwrap();
    let field = FieldPoint::along(b, dir).unwrap();
    let set = transitions(&sys, &field, drive).unwrap();
    let strong = set.strong();
    assert_eq!(strong.len(), 3, "expected exactly three strong lines");
    let freqs: Vec<f64> = strong.iter().map(|t| t.frequency_hz).collect();

    // half the outer-line separation equals the orientation-projected
    // hyperfine sqrt(A_par^2/3 + 2 A_perp^2/3) ~ 104.3 MHz for a <111>
    // defect axis seen along [001]
    let a_eff = ((sys.hyperfine_par_hz.powi(2) + 2.0 * sys.hyperfine_perp_hz.powi(2)) / 3.0).sqrt();
    assert!((a_eff - 104.3e6).abs() < 0.1e6, "a_eff = {a_eff}");
    let half_spread = (freqs[2] - freqs[0]) / 2.0;
    assert!(
        (half_spread - a_eff).abs() <= 2.0e6,
        "half spread {half_spread} vs {a_eff}"
    );

    // every strong line must match an eigenvalue gap of the independently
    // assembled and diagonalized Hamiltonian
    let evals = hermitian_eigenvalues(&oracle_hamiltonian(&sys, b, dir));
    for &f in &freqs {
        let best = evals
            .iter()
            .enumerate()
            .flat_map(|(i, &ea)| evals[i + 1..].iter().map(move |&eb| (eb - ea - f).abs()))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 2.0, "line {f} off oracle gaps by {best} Hz");
    }

    // the four defect orientations are equivalent for this field direction
    let axes = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let per_axis: Vec<Vec<f64>> = axes
        .iter()
        .map(|&ax| {
            let sys = SpinSystem::p1(ax).unwrap();
            let set = transitions(&sys, &field, drive).unwrap();
            set.strong().iter().map(|t| t.frequency_hz).collect()
        })
        .collect();
    for k in 0..3 {
        let lo = per_axis.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
        let hi = per_axis
            .iter()
            .map(|v| v[k])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 1.0, "orientation spread {} Hz on line {k}", hi - lo);
    }
    println!(
        "PASS 4/12 three strong lines at 198 mT, half spread {:.2} MHz (want {:.2} +- 2), \
         oracle-matched, orientation spread < 1 Hz",
        half_spread / 1e6,
        a_eff / 1e6
    );
}

#[test]
fn a05_central_manifold_crossing_field() {
    let sys = SpinSystem::p1([1.0, 1.0, 1.0]).unwrap();
    let b = resonance_field(&sys, 5.534e9, [0.0, 0.0, 1.0], Manifold::mi(0)).unwrap();
    assert!(
        (0.196..=0.201).contains(&b),
        "m_I = 0 crossing at {} T",
        b
    );
    println!(
        "PASS 5/12 m_I = 0 line crosses 5.534 GHz at {:.2} mT (want 196..201)",
        b * 1e3
    );
}

#[test]
fn a06_avoided_crossing_round_trip() {
    let g_true = 7.8e6;
    let gamma = 9.6e6;
    let res = ResonatorParams::new(5.5366e9, 240.6e3, 1.7e6 - 240.6e3);
    let gb = SpinSystem::dpph().g_factor * MU_B_OVER_H;
    let crossing = res.omega_r_hz / gb;
    let fields = linspace(crossing - 4.0e-3, crossing + 4.0e-3, 41);
    let freqs = linspace(res.omega_r_hz - 30.0e6, res.omega_r_hz + 30.0e6, 301);
    let line = CrossingLine::new("dpph", move |b: f64| gb * b);
    let map = sweep_map(
        &res,
        std::slice::from_ref(&line),
        &[g_true],
        gamma,
        &fields,
        &freqs,
    )
    .unwrap();

    let fit = fit_avoided_crossing(
        &map,
        &res,
        std::slice::from_ref(&line),
        &CrossingOptions::new(gamma),
    )
    .unwrap();
    let g = fit.g_ens_hz[0];
    assert!((g - g_true).abs() <= 0.02 * g_true, "g = {g}");
    assert_monotone(&fit.result, "avoided-crossing fit");

    let min_split = linspace(crossing - 1.0e-3, crossing + 1.0e-3, 2001)
        .iter()
        .map(|&b| {
            let (up, lo) = dressed_frequencies(res.omega_r_hz, gb * b, g);
            up - lo
        })
        .fold(f64::INFINITY, f64::min);
    assert!(
        (min_split - 15.6e6).abs() <= 0.3e6,
        "min splitting = {min_split}"
    );
    println!(
        "PASS 6/12 map round trip: g = {:.4} MHz (want 7.8 +- 2%), min splitting {:.2} MHz \
         (want 15.6 +- 0.3)",
        g / 1e6,
        min_split / 1e6
    );
}

#[test]
fn a07_lorentzian_density_inversion() {
    let g = 7.8e6;
    let gamma = 9.6e6;
    let res = ResonatorParams::new(5.5366e9, 240_608.7, 1_459_391.3);
    let ens = EnsembleParams::lorentzian(g, res.omega_r_hz, gamma);
    let half_window = 50.0 * gamma;
    let freqs = linspace(
        res.omega_r_hz - half_window,
        res.omega_r_hz + half_window,
        2001,
    );
    let values: Vec<Complex64> = freqs
        .iter()
        .map(|&f| reflection_coupled(f, &res, &ens).unwrap())
        .collect();
    let trace = ComplexTrace::new(freqs, values).unwrap();

    let inv = invert_spin_distribution(&trace, &res, Some(g)).unwrap();
    let area = trapezoid(&inv.omega_hz, &inv.density);
    assert!((area - 1.0).abs() <= 0.01, "area = {area}");
    let fwhm = fwhm_of_samples(&inv.omega_hz, &inv.density).unwrap();
    assert!((fwhm - gamma).abs() <= 0.02 * gamma, "fwhm = {fwhm}");
    println!(
        "PASS 7/12 density inversion: fwhm = {:.3} MHz (want 9.6 +- 2%), area = {:.4} \
         (want 1 +- 1%)",
        fwhm / 1e6,
        area
    );
}

#[test]
fn a08_relaxation_time_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let noise = Normal::new(0.0, 0.01).unwrap();

    let t1_true = 5.54e-3;
    let times = linspace(0.0, 25.0e-3, 201);
    let signal: Vec<f64> = times
        .iter()
        .map(|&t| saturation_recovery_model(t, t1_true, 1.0) + noise.sample(&mut rng))
        .collect();
    let rec = fit_t1(&times, &signal, None).unwrap();
    let t1 = rec.value("t1").unwrap();
    assert!((t1 - t1_true).abs() <= 0.03 * t1_true, "t1 = {t1}");
    assert_monotone(&rec, "saturation-recovery fit");

    let t2_true = 117.3e-6;
    let p_true = 2.1;
    let two_tau = linspace(0.0, 300.0e-6, 201);
    let amps: Vec<f64> = two_tau
        .iter()
        .map(|&tt| echo_decay_model(tt, t2_true, p_true, 1.0) + noise.sample(&mut rng))
        .collect();
    let dec = fit_t2(&two_tau, &amps, None).unwrap();
    let t2 = dec.value("t2").unwrap();
    let p = dec.value("stretch_p").unwrap();
    assert!((t2 - t2_true).abs() <= 0.01 * t2_true, "t2 = {t2}");
    assert!((p - p_true).abs() <= 0.05, "p = {p}");
    assert_monotone(&dec, "echo-decay fit");
    println!(
        "PASS 8/12 relaxation fits at 1% noise: T1 = {:.3} ms (want 5.54 +- 3%), \
         T2 = {:.2} us (want 117.3 +- 1%), p = {:.3} (want 2.1 +- 0.05)",
        t1 * 1e3,
        t2 * 1e6,
        p
    );
}

#[test]
fn a09_echo_refocusing_independent_of_broadening() {
    let relax = RelaxationParams::new(f64::INFINITY, f64::INFINITY, 1.0);
    let tau = 2.0e-6;
    for gamma in [0.1e6, 1.0e6, 10.0e6, 100.0e6] {
        let echo = simulate_hahn_echo(tau, gamma, &relax, 2001).unwrap();
        assert!(
            (echo.echo_amplitude - 1.0).abs() <= 0.01,
            "amplitude {} at fwhm {gamma}",
            echo.echo_amplitude
        );
        let i_max = echo
            .m_perp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .map(|(i, _)| i)
            .unwrap();
        let dt = echo.times_s[1] - echo.times_s[0];
        assert!(
            (echo.times_s[i_max] - echo.echo_time_s).abs() <= dt * (1.0 + 1e-9),
            "echo peak at {} vs 2 tau = {} (dt {dt}, fwhm {gamma})",
            echo.times_s[i_max],
            echo.echo_time_s
        );
    }
    println!(
        "PASS 9/12 echo amplitude 1.000 +- 0.01 with the peak at 2 tau within one sample \
         for inhomogeneous widths 0.1..100 MHz"
    );
}

#[test]
fn a10_loss_budget_regimes() {
    let (b_vac, volume) = DesignParams::resolve_field_volume(5.534e9, Some(5.0e-12), None).unwrap();
    let base = DesignParams {
        omega_r_hz: 5.534e9,
        b_vac_t: b_vac,
        mode_volume_m3: volume,
        epsilon_perp: spinres::design::RUTILE_EPSILON_PERP,
        epsilon_par: spinres::design::RUTILE_EPSILON_PAR,
        tan_delta: 1.0e-6,
        electric_filling: 1.0,
        magnetic_filling: 0.37,
        q_radiation: 2.33e4,
        q_conductor: 1.0e7,
    };
    let open = loss_budget(&base).unwrap();
    assert!(
        (open.q_int - 2.3e4).abs() <= 0.05 * 2.3e4,
        "open-aperture Q_int = {}",
        open.q_int
    );
    assert!(open.radiation_fraction > 0.5);

    let shielded = DesignParams {
        q_radiation: 1.0e9,
        q_conductor: 1.0e9,
        ..base
    };
    let closed = loss_budget(&shielded).unwrap();
    assert!(
        (closed.q_int - 1.0e6).abs() <= 0.05e6,
        "shielded Q_int = {}",
        closed.q_int
    );
    assert!(closed.dielectric_fraction > 0.9);
    println!(
        "PASS 10/12 loss budget: radiation-dominated Q_int = {:.3e} (want ~2.3e4), \
         dielectric-limited Q_int = {:.3e} (want ~1e6)",
        open.q_int, closed.q_int
    );
}

#[test]
fn a11_optimizer_invariants() {
    // noiseless generators, starts displaced by 20%, recovery to <= 0.1%
    let t1_true = 5.54e-3;
    let times = linspace(0.0, 25.0e-3, 201);
    let signal: Vec<f64> = times
        .iter()
        .map(|&t| saturation_recovery_model(t, t1_true, 1.0))
        .collect();
    let rec = fit_t1(&times, &signal, Some((1.2, 0.8 * t1_true))).unwrap();
    assert_monotone(&rec, "t1 round trip");
    assert!((rec.value("t1").unwrap() - t1_true).abs() <= 1e-3 * t1_true);
    assert!((rec.value("amplitude").unwrap() - 1.0).abs() <= 1e-3);

    let t2_true = 117.3e-6;
    let p_true = 2.1;
    let two_tau = linspace(0.0, 300.0e-6, 201);
    let amps: Vec<f64> = two_tau
        .iter()
        .map(|&tt| echo_decay_model(tt, t2_true, p_true, 1.0))
        .collect();
    let dec = fit_t2(&two_tau, &amps, Some((0.8, 1.2 * t2_true, 1.2 * p_true))).unwrap();
    assert_monotone(&dec, "t2 round trip");
    assert!((dec.value("t2").unwrap() - t2_true).abs() <= 1e-3 * t2_true);
    assert!((dec.value("stretch_p").unwrap() - p_true).abs() <= 1e-3 * p_true);

    let res = ResonatorParams::new(5.5366e9, 240_608.7, 1_459_391.3);
    let g_true = 7.8e6;
    let gamma = 9.6e6;
    let ws_true = res.omega_r_hz + 2.0e6;
    let ens = EnsembleParams::lorentzian(g_true, ws_true, gamma);
    let freqs = linspace(res.omega_r_hz - 40.0e6, res.omega_r_hz + 40.0e6, 1001);
    let values: Vec<Complex64> = freqs
        .iter()
        .map(|&f| reflection_coupled(f, &res, &ens).unwrap())
        .collect();
    let trace = Trace::Complex(ComplexTrace::new(freqs.clone(), values).unwrap());
    let coupled = fit_coupled_spectrum(
        &trace,
        &res,
        Some((1.2 * g_true, ws_true + 0.2 * gamma, 0.8 * gamma)),
    )
    .unwrap();
    assert_monotone(&coupled.result, "coupled-spectrum round trip");
    assert!((coupled.ensemble.g_ens_hz - g_true).abs() <= 1e-3 * g_true);
    assert!((coupled.ensemble.omega_s_hz - ws_true).abs() <= 1e-3 * gamma);
    assert!((coupled.ensemble.gamma_fwhm_hz - gamma).abs() <= 1e-3 * gamma);

    // auto-started bare-resonator fit joins the monotonicity sweep
    let bare: Vec<Complex64> = freqs.iter().map(|&f| reflection_bare(f, &res)).collect();
    let bare_trace = Trace::Complex(ComplexTrace::new(freqs, bare).unwrap());
    let rfit = fit_resonator(&bare_trace, CouplingRegime::Overcoupled, None).unwrap();
    assert_monotone(&rfit.result, "bare-resonator fit");
    assert!((rfit.params.kappa_int_hz - res.kappa_int_hz).abs() <= 1e-3 * res.kappa_int_hz);
    assert!((rfit.params.kappa_ext_hz - res.kappa_ext_hz).abs() <= 1e-3 * res.kappa_ext_hz);

    println!(
        "PASS 11/12 monotone accepted-cost histories and noiseless round trips within 0.1% \
         from 20%-displaced starts"
    );
}

// ---- CLI determinism ----

fn write(path: &std::path::Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn run_cli(sub: &str, config: &std::path::Path, out: &std::path::Path, seed: Option<u64>) {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_spinres"));
    cmd.arg(sub).arg("--config").arg(config).arg("--out").arg(out);
    if let Some(s) = seed {
        cmd.arg("--seed").arg(s.to_string());
    }
    let output = cmd.output().unwrap();
    assert!(
        output.status.success(),
        "{sub} failed (status {:?}):\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Byte-compare two output directories; the manifest is compared with its
/// timestamp line removed.
fn assert_same_outputs(a: &std::path::Path, b: &std::path::Path) {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        let fa = std::fs::read(a.join(&name)).unwrap();
        let fb = std::fs::read(b.join(&name)).unwrap();
        if name == "manifest.json" {
            let strip = |bytes: &[u8]| -> String {
                String::from_utf8_lossy(bytes)
                    .lines()
                    .filter(|l| !l.contains("unix_time_s"))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&fa), strip(&fb), "{name} differs beyond its timestamp");
        } else {
            assert_eq!(fa, fb, "{name} differs between runs");
        }
    }
}

#[test]
fn a12_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let resonator =
        r#"{ "omega_r_hz": 5.5366e9, "kappa_int_hz": 240608.7, "kappa_ext_hz": 1459391.3 }"#;

    // input data shared by the file-reading subcommands
    let res = ResonatorParams::new(5.5366e9, 240_608.7, 1_459_391.3);
    let freqs = linspace(res.omega_r_hz - 40.0e6, res.omega_r_hz + 40.0e6, 801);
    let mut bare_csv = String::from("freq_hz,re,im\n");
    let mut coupled_csv = String::from("freq_hz,re,im\n");
    let ens = EnsembleParams::lorentzian(7.8e6, res.omega_r_hz, 9.6e6);
    for &f in &freqs {
        let s = reflection_bare(f, &res);
        bare_csv.push_str(&format!("{f},{},{}\n", s.re, s.im));
        let s = reflection_coupled(f, &res, &ens).unwrap();
        coupled_csv.push_str(&format!("{f},{},{}\n", s.re, s.im));
    }
    write(&root.join("bare.csv"), &bare_csv);
    write(&root.join("coupled.csv"), &coupled_csv);

    let mut t1_csv = String::from("time_s,signal\n");
    for &t in &linspace(0.0, 25.0e-3, 101) {
        t1_csv.push_str(&format!("{t},{}\n", saturation_recovery_model(t, 5.54e-3, 1.0)));
    }
    write(&root.join("t1.csv"), &t1_csv);
    let mut t2_csv = String::from("time_s,amplitude\n");
    for &tt in &linspace(0.0, 300.0e-6, 101) {
        t2_csv.push_str(&format!("{tt},{}\n", echo_decay_model(tt, 117.3e-6, 2.1, 1.0)));
    }
    write(&root.join("t2.csv"), &t2_csv);

    // a noiseless sweep provides the crossing-fit input map
    let sweep_in = format!(
        r#"{{
  "resonator": {resonator},
  "spins": {{ "species": "dpph" }},
  "g_ens_hz": 7.8e6,
  "gamma_fwhm_hz": 9.6e6,
  "fields_t": {{ "start": 0.1955, "stop": 0.1995, "count": 21 }},
  "freqs_hz": {{ "start": 5.5166e9, "stop": 5.5566e9, "count": 201 }}
}}"#
    );
    write(&root.join("sweep-input.json"), &sweep_in);
    run_cli(
        "simulate-sweep",
        &root.join("sweep-input.json"),
        &root.join("crossing-input"),
        None,
    );

    let configs: Vec<(&str, String, Option<u64>)> = vec![
        (
            "fit-resonator",
            format!(
                r#"{{ "trace": {:?}, "format": "re-im" }}"#,
                root.join("bare.csv")
            ),
            None,
        ),
        (
            "fit-coupled",
            format!(
                r#"{{ "trace": {:?}, "format": "re-im", "resonator": {resonator} }}"#,
                root.join("coupled.csv")
            ),
            None,
        ),
        (
            "fit-crossing",
            format!(
                r#"{{ "map": {:?}, "resonator": {resonator}, "spins": {{ "species": "dpph" }}, "gamma_fwhm_hz": 9.6e6 }}"#,
                root.join("crossing-input").join("map.csv")
            ),
            None,
        ),
        (
            "invert-density",
            format!(
                r#"{{ "trace": {:?}, "format": "re-im", "resonator": {resonator}, "g_ens_hz": 7.8e6 }}"#,
                root.join("coupled.csv")
            ),
            None,
        ),
        (
            "simulate-sweep",
            format!(
                r#"{{
  "resonator": {resonator},
  "spins": {{ "species": "dpph" }},
  "g_ens_hz": 7.8e6,
  "gamma_fwhm_hz": 9.6e6,
  "fields_t": {{ "start": 0.1955, "stop": 0.1995, "count": 21 }},
  "freqs_hz": {{ "start": 5.5166e9, "stop": 5.5566e9, "count": 201 }},
  "noise_sigma": 0.002
}}"#
            ),
            Some(42),
        ),
        (
            "pulse-sim",
            r#"{
  "kind": "hahn-echo",
  "tau_s": 1.0e-6,
  "ensemble_fwhm_hz": 5.0e6,
  "relaxation": { "t1_s": 1.0e-3, "t2_s": 1.0e-4, "stretch_p": 1.3 },
  "n_spins": 201
}"#
            .to_string(),
            None,
        ),
        (
            "fit-t1",
            format!(r#"{{ "data": {:?} }}"#, root.join("t1.csv")),
            None,
        ),
        (
            "fit-t2",
            format!(r#"{{ "data": {:?} }}"#, root.join("t2.csv")),
            None,
        ),
        (
            "design",
            r#"{
  "omega_r_hz": 5.534e9,
  "b_vac_t": 5.0e-12,
  "temperature_k": 0.01,
  "sample": { "species": "p1", "concentration_ppm": 106.0, "volume_m3": 1.0e-9 },
  "budget": { "tan_delta": 1.0e-6, "electric_filling": 1.0, "q_radiation": 2.33e4, "q_conductor": 1.0e7 }
}"#
            .to_string(),
            None,
        ),
    ];

    for (sub, config, seed) in &configs {
        let cfg_path = root.join(format!("{sub}.json"));
        write(&cfg_path, config);
        let out_a = root.join(format!("{sub}-a"));
        let out_b = root.join(format!("{sub}-b"));
        run_cli(sub, &cfg_path, &out_a, *seed);
        run_cli(sub, &cfg_path, &out_b, *seed);
        assert_same_outputs(&out_a, &out_b);
    }
    println!(
        "PASS 12/12 all {} subcommands byte-identical across repeat runs (timestamp aside)",
        configs.len()
    );
}
