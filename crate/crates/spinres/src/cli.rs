//! Command-line workflows: each subcommand reads a JSON config, runs one
//! analysis, and writes a report, plot data and a run manifest into the
//! output directory.
//!
//! Exit codes: 0 success, 1 usage/config problems, 2 model or fit
//! failures, 3 data-file parse failures.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::cavity::{
    self, dressed_frequencies, reflection_bare, reflection_coupled, trapezoid, ResonatorParams,
    Trace,
};
use crate::constants::MU_B_OVER_H;
use crate::design;
use crate::fit::{
    fit_avoided_crossing, fit_coupled_spectrum, fit_resonator, fit_t1, fit_t2, sweep_map,
    CouplingRegime, CrossingLine, CrossingOptions, FitError,
};
use crate::io::{
    load_field_map, load_trace, load_xy, write_columns, write_field_map, write_json, IoError,
    Manifest, Report, TraceFormat,
};
use crate::pulse::{
    echo_decay_model, propagate_bloch, saturation_recovery_model, simulate_hahn_echo,
    PulseError, PulseSequence, RelaxationParams,
};
use crate::spin::{self, FieldPoint, Manifold, SpinError, SpinSystem};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Usage(String),
    /// A model or fit rejected otherwise well-formed inputs.
    #[error("{0}")]
    Model(String),
    /// A data file failed to parse.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Parse { .. } | IoError::Trace(_) => CliError::Data(e.to_string()),
            IoError::Io(_) | IoError::Json(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<PulseError> for CliError {
    fn from(e: PulseError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<cavity::CavityError> for CliError {
    fn from(e: cavity::CavityError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<SpinError> for CliError {
    fn from(e: SpinError) -> Self {
        CliError::Usage(format!("spin system: {e}"))
    }
}

impl From<design::DesignError> for CliError {
    fn from(e: design::DesignError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "spinres",
    version,
    about = "Reflection spectroscopy of resonator-coupled spin ensembles: simulation, fitting, design arithmetic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a bare resonator reflection trace
    FitResonator(RunArgs),
    /// Fit resonator + one spin line jointly on a single trace
    FitCoupled(RunArgs),
    /// Fit couplings to an avoided-crossing field sweep
    FitCrossing(RunArgs),
    /// Recover the spin spectral density from a complex trace
    InvertDensity(RunArgs),
    /// Forward-model a reflection map over a field sweep
    SimulateSweep(RunArgs),
    /// Bloch-sphere pulse simulation (Hahn echo or custom sequence)
    PulseSim(RunArgs),
    /// Fit a saturation-recovery curve for T1
    FitT1(RunArgs),
    /// Fit a stretched-exponential echo decay for T2
    FitT2(RunArgs),
    /// Resonator-spin design arithmetic and loss budget
    Design(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report, manifest and plot data
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for any stochastic simulation
    #[arg(long)]
    seed: Option<u64>,
}

/// Parse arguments from the process environment and run; returns the exit
/// code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let result = match cli.command {
        Command::FitResonator(a) => cmd_fit_resonator(&a),
        Command::FitCoupled(a) => cmd_fit_coupled(&a),
        Command::FitCrossing(a) => cmd_fit_crossing(&a),
        Command::InvertDensity(a) => cmd_invert_density(&a),
        Command::SimulateSweep(a) => cmd_simulate_sweep(&a),
        Command::PulseSim(a) => cmd_pulse_sim(&a),
        Command::FitT1(a) => cmd_fit_t1(&a),
        Command::FitT2(a) => cmd_fit_t2(&a),
        Command::Design(a) => cmd_design(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Cap internal parallelism from `SPINRES_THREADS`.
fn init_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("SPINRES_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring SPINRES_THREADS={v:?} (want a positive integer)"),
        }
    }
}

/// Read and deserialize a config, returning it alongside its fully
/// resolved form (defaults applied) for the manifest.
fn load_config<T: DeserializeOwned + Serialize>(
    path: &Path,
) -> Result<(T, serde_json::Value), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: T = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let resolved = serde_json::to_value(&cfg)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    Ok((cfg, resolved))
}

fn unit_for(name: &str) -> &'static str {
    match name {
        "phase" => "rad",
        "t1" | "t2" => "s",
        "field_offset" => "T",
        "omega_r" | "kappa_int" | "kappa_ext" | "omega_s" | "gamma_fwhm" | "center" | "fwhm" => {
            "Hz"
        }
        _ if name.starts_with("g_ens") => "Hz",
        _ => "",
    }
}

struct Emitter<'a> {
    args: &'a RunArgs,
    manifest: Manifest,
}

impl<'a> Emitter<'a> {
    fn new(args: &'a RunArgs, command: &str, config: serde_json::Value) -> Result<Self, CliError> {
        fs::create_dir_all(&args.out).map_err(|e| {
            CliError::Usage(format!(
                "cannot create output directory {}: {e}",
                args.out.display()
            ))
        })?;
        let mut manifest = Manifest::new(command, config, args.seed);
        manifest.inputs.push(args.config.display().to_string());
        Ok(Emitter { args, manifest })
    }

    fn input(&mut self, path: &str) {
        self.manifest.inputs.push(path.to_string());
    }

    fn path(&self, name: &str) -> PathBuf {
        self.args.out.join(name)
    }

    fn plot(&mut self, name: &str, headers: &[&str], cols: &[&[f64]]) -> Result<(), CliError> {
        write_columns(&self.path(name), headers, cols)?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn map(&mut self, name: &str, map: &cavity::FieldSweepMap) -> Result<(), CliError> {
        write_field_map(&self.path(name), map)?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    /// Write the report and the manifest, and summarize on stdout.
    fn finish(mut self, report: &Report) -> Result<(), CliError> {
        write_json(&self.path("report.json"), report)?;
        self.manifest.outputs.push("report.json".to_string());
        self.manifest.outputs.push("manifest.json".to_string());
        write_json(&self.path("manifest.json"), &self.manifest)?;
        println!("model: {}", report.model);
        for (name, p) in &report.parameters {
            match p.sigma {
                Some(s) => println!("  {name} = {} ± {s} {}", p.value, p.unit),
                None => println!("  {name} = {} {}", p.value, p.unit),
            }
        }
        if let Some(c) = &report.convergence {
            println!("convergence: {c}");
        }
        println!("wrote {}", self.path("report.json").display());
        Ok(())
    }
}

// ---------------------------------------------------------------- configs

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitResonatorConfig {
    trace: String,
    format: TraceFormat,
    #[serde(default)]
    coupling: CouplingRegime,
    #[serde(default)]
    noise_sigma: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitCoupledConfig {
    trace: String,
    format: TraceFormat,
    resonator: ResonatorParams,
    #[serde(default)]
    init: Option<CoupledInit>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoupledInit {
    g_ens_hz: f64,
    omega_s_hz: f64,
    gamma_fwhm_hz: f64,
}

/// Which spin lines cross the resonator, for crossing fits and sweep
/// simulation.
#[derive(Serialize, Deserialize, Clone)]
#[serde(tag = "species", rename_all = "kebab-case", deny_unknown_fields)]
enum SpinConfig {
    /// Single free-radical line at its literature g-factor (overridable).
    Dpph {
        #[serde(default)]
        g_factor: Option<f64>,
    },
    /// One hyperfine-split nitrogen center: three lines, one per nuclear
    /// manifold.
    P1 {
        axis: [f64; 3],
        field_direction: [f64; 3],
        drive_direction: [f64; 3],
    },
    /// Bare electron line with an explicit g-factor.
    FreeSpin { g_factor: f64 },
}

impl SpinConfig {
    fn lines(&self) -> Result<Vec<CrossingLine<'static>>, CliError> {
        match self {
            SpinConfig::Dpph { g_factor } => {
                let g = g_factor.unwrap_or(SpinSystem::dpph().g_factor);
                Ok(vec![zeeman_line("dpph", g)])
            }
            SpinConfig::FreeSpin { g_factor } => Ok(vec![zeeman_line("electron", *g_factor)]),
            SpinConfig::P1 {
                axis,
                field_direction,
                drive_direction,
            } => {
                let sys = SpinSystem::p1(*axis)?;
                let dir = *field_direction;
                let drive = *drive_direction;
                // validate the geometry once up front so errors surface as
                // config problems, not NaNs mid-fit
                let probe = FieldPoint::along(0.1, dir)?;
                spin::transitions(&sys, &probe, drive)?;
                Ok([1i8, 0, -1]
                    .into_iter()
                    .map(|m| {
                        let label = Manifold::mi(m);
                        let sys = sys.clone();
                        CrossingLine::new(label.to_string(), move |b: f64| {
                            manifold_freq(&sys, b, dir, drive, label)
                        })
                    })
                    .collect())
            }
        }
    }
}

fn zeeman_line(label: &str, g_factor: f64) -> CrossingLine<'static> {
    CrossingLine::new(label, move |b: f64| g_factor * MU_B_OVER_H * b.max(0.0))
}

fn manifold_freq(sys: &SpinSystem, b: f64, dir: [f64; 3], drive: [f64; 3], label: Manifold) -> f64 {
    let field = match FieldPoint::along(b.max(0.0), dir) {
        Ok(f) => f,
        Err(_) => return f64::NAN,
    };
    match spin::transitions(sys, &field, drive) {
        Ok(set) => set
            .manifold_line(label)
            .map(|t| t.frequency_hz)
            .unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitCrossingConfig {
    map: String,
    resonator: ResonatorParams,
    spins: SpinConfig,
    gamma_fwhm_hz: f64,
    #[serde(default)]
    fit_field_offset: bool,
    #[serde(default)]
    noise_sigma: Option<f64>,
    /// Starting coupling for every line (auto-estimated when absent).
    #[serde(default)]
    g_init_hz: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertDensityConfig {
    trace: String,
    format: TraceFormat,
    resonator: ResonatorParams,
    /// Known collective coupling; when absent the density is normalized to
    /// unit area and the implied coupling is reported.
    #[serde(default)]
    g_ens_hz: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    start: f64,
    stop: f64,
    count: usize,
}

impl GridSpec {
    fn to_vec(self, what: &str) -> Result<Vec<f64>, CliError> {
        if self.count < 2 || !(self.stop > self.start) {
            return Err(CliError::Usage(format!(
                "{what}: need count >= 2 and stop > start, got {} points on [{}, {}]",
                self.count, self.start, self.stop
            )));
        }
        let n = self.count;
        Ok((0..n)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PerLine {
    Same(f64),
    Each(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSweepConfig {
    resonator: ResonatorParams,
    spins: SpinConfig,
    /// One coupling for all lines, or one per line.
    g_ens_hz: PerLine,
    gamma_fwhm_hz: f64,
    fields_t: GridSpec,
    freqs_hz: GridSpec,
    /// Gaussian magnitude noise added per pixel (seeded; 0 = noiseless).
    #[serde(default)]
    noise_sigma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelaxConfig {
    /// Longitudinal relaxation time; absent = no T1 decay.
    #[serde(default)]
    t1_s: Option<f64>,
    /// Transverse relaxation time; absent = no T2 decay.
    #[serde(default)]
    t2_s: Option<f64>,
    #[serde(default = "one")]
    stretch_p: f64,
    #[serde(default = "one")]
    equilibrium_mz: f64,
}

fn one() -> f64 {
    1.0
}

impl RelaxConfig {
    fn to_params(&self) -> RelaxationParams {
        RelaxationParams {
            t1_s: self.t1_s.unwrap_or(f64::INFINITY),
            t2_s: self.t2_s.unwrap_or(f64::INFINITY),
            stretch_p: self.stretch_p,
            equilibrium_mz: self.equilibrium_mz,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum PulseSimConfig {
    /// π/2 – τ – π – τ ensemble average around the echo.
    HahnEcho {
        tau_s: f64,
        ensemble_fwhm_hz: f64,
        relaxation: RelaxConfig,
        #[serde(default = "default_n_spins")]
        n_spins: usize,
    },
    /// Single-spin Bloch trajectory through an arbitrary segment list.
    Sequence {
        sequence: PulseSequence,
        relaxation: RelaxConfig,
        #[serde(default)]
        detuning_hz: f64,
    },
}

fn default_n_spins() -> usize {
    2001
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitT1Config {
    data: String,
    #[serde(default)]
    init: Option<T1Init>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct T1Init {
    amplitude: f64,
    t1_s: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitT2Config {
    data: String,
    #[serde(default)]
    init: Option<T2Init>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct T2Init {
    amplitude: f64,
    t2_s: f64,
    stretch_p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignConfig {
    omega_r_hz: f64,
    /// Exactly one of `b_vac_t` and `mode_volume_m3` must be given; the
    /// other is derived.
    #[serde(default)]
    b_vac_t: Option<f64>,
    #[serde(default)]
    mode_volume_m3: Option<f64>,
    #[serde(default = "default_g_factor")]
    g_factor: f64,
    /// Sample temperature for the thermal polarization; absent = fully
    /// polarized.
    #[serde(default)]
    temperature_k: Option<f64>,
    #[serde(default)]
    sample: Option<design::SampleSpec>,
    #[serde(default)]
    budget: Option<BudgetConfig>,
}

fn default_g_factor() -> f64 {
    2.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetConfig {
    #[serde(default = "default_eps_perp")]
    epsilon_perp: f64,
    #[serde(default = "default_eps_par")]
    epsilon_par: f64,
    tan_delta: f64,
    electric_filling: f64,
    #[serde(default = "default_magnetic_filling")]
    magnetic_filling: f64,
    q_radiation: f64,
    q_conductor: f64,
}

fn default_eps_perp() -> f64 {
    design::RUTILE_EPSILON_PERP
}

fn default_eps_par() -> f64 {
    design::RUTILE_EPSILON_PAR
}

fn default_magnetic_filling() -> f64 {
    0.37
}

// --------------------------------------------------------------- commands

fn cmd_fit_resonator(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<FitResonatorConfig>(&args.config)?;
    let mut emit = Emitter::new(args, "fit-resonator", resolved)?;
    let tf = load_trace(Path::new(&cfg.trace), cfg.format)?;
    emit.input(&tf.path);
    if tf.skipped_rows > 0 {
        eprintln!("note: skipped {} unparseable rows in {}", tf.skipped_rows, tf.path);
    }

    let fit = fit_resonator(&tf.trace, cfg.coupling, cfg.noise_sigma)?;
    let mut report = Report::from_fit("fit-resonator", &[&tf.path], &fit.result, unit_for);
    report.push("kappa_tot", fit.kappa_tot_hz, Some(fit.kappa_tot_sigma_hz), "Hz");
    report.push("q_int", fit.q_int, Some(fit.q_int_sigma), "");
    report.push("noise_sigma", fit.noise_sigma, None, "");

    let freqs = tf.trace.freqs_hz();
    let data = tf.trace.magnitudes();
    let model: Vec<f64> = freqs
        .iter()
        .map(|&f| reflection_bare(f, &fit.params).norm())
        .collect();
    let residual: Vec<f64> = data.iter().zip(&model).map(|(d, m)| d - m).collect();
    emit.plot(
        "fit.csv",
        &["freq_hz", "data_mag", "model_mag", "residual"],
        &[freqs, &data, &model, &residual],
    )?;
    println!("coupling regime: {:?}", fit.regime);
    emit.finish(&report)
}

fn cmd_fit_coupled(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<FitCoupledConfig>(&args.config)?;
    let mut emit = Emitter::new(args, "fit-coupled", resolved)?;
    let tf = load_trace(Path::new(&cfg.trace), cfg.format)?;
    emit.input(&tf.path);

    let init = cfg
        .init
        .as_ref()
        .map(|i| (i.g_ens_hz, i.omega_s_hz, i.gamma_fwhm_hz));
    let fit = fit_coupled_spectrum(&tf.trace, &cfg.resonator, init)?;
    let report = Report::from_fit("fit-coupled", &[&tf.path], &fit.result, unit_for);

    let freqs = tf.trace.freqs_hz();
    let data = tf.trace.magnitudes();
    let model: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            reflection_coupled(f, &cfg.resonator, &fit.ensemble)
                .map(|s| s.norm())
                .unwrap_or(f64::NAN)
        })
        .collect();
    let residual: Vec<f64> = data.iter().zip(&model).map(|(d, m)| d - m).collect();
    emit.plot(
        "fit.csv",
        &["freq_hz", "data_mag", "model_mag", "residual"],
        &[freqs, &data, &model, &residual],
    )?;
    emit.finish(&report)
}

fn cmd_fit_crossing(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<FitCrossingConfig>(&args.config)?;
    let mut emit = Emitter::new(args, "fit-crossing", resolved)?;
    let mf = load_field_map(Path::new(&cfg.map))?;
    emit.input(&mf.path);
    if mf.degenerate {
        eprintln!("note: {} holds a single field point", mf.path);
    }

    let mut lines = cfg.spins.lines()?;
    if let Some(g0) = cfg.g_init_hz {
        lines = lines.into_iter().map(|l| l.with_g_init(g0)).collect();
    }
    let mut opts = CrossingOptions::new(cfg.gamma_fwhm_hz);
    opts.fit_field_offset = cfg.fit_field_offset;
    opts.noise_sigma = cfg.noise_sigma;
    let fit = fit_avoided_crossing(&mf.map, &cfg.resonator, &lines, &opts)?;

    let mut report = Report::from_fit("fit-crossing", &[&mf.path], &fit.result, unit_for);
    report.push("used_columns", fit.used_columns as f64, None, "");
    report.push("total_columns", fit.total_columns as f64, None, "");

    // observed dip positions, one row per dip
    let mut dip_fields = Vec::new();
    let mut dip_freqs = Vec::new();
    for (b, dips) in &fit.extracted_dips {
        for &f in dips {
            dip_fields.push(*b);
            dip_freqs.push(f);
        }
    }
    emit.plot("dips.csv", &["field_t", "dip_hz"], &[&dip_fields, &dip_freqs])?;

    // fitted dressed branches per line over the full field axis
    let mut headers = vec!["field_t".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![mf.map.fields_t.clone()];
    for (line, &g) in lines.iter().zip(&fit.g_ens_hz) {
        headers.push(format!("upper[{}]", line.label));
        headers.push(format!("lower[{}]", line.label));
        let mut upper = Vec::with_capacity(mf.map.fields_t.len());
        let mut lower = Vec::with_capacity(mf.map.fields_t.len());
        for &b in &mf.map.fields_t {
            let fs = line.frequency_at(b + fit.field_offset_t);
            let (u, l) = dressed_frequencies(cfg.resonator.omega_r_hz, fs, g);
            upper.push(u);
            lower.push(l);
        }
        cols.push(upper);
        cols.push(lower);
    }
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    emit.plot("branches.csv", &header_refs, &col_refs)?;
    emit.finish(&report)
}

fn cmd_invert_density(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<InvertDensityConfig>(&args.config)?;
    let mut emit = Emitter::new(args, "invert-density", resolved)?;
    let tf = load_trace(Path::new(&cfg.trace), cfg.format)?;
    emit.input(&tf.path);
    let trace = match &tf.trace {
        Trace::Complex(t) => t,
        Trace::Magnitude(_) => {
            return Err(CliError::Usage(
                "density inversion needs a complex trace (formats re-im or mag-phase-deg)".into(),
            ))
        }
    };

    let inv = cavity::invert_spin_distribution(trace, &cfg.resonator, cfg.g_ens_hz)?;
    let mut report = Report::new("density-inversion", "invert-density", &[&tf.path]);
    report.push("g_ens", inv.g_ens_sq_hz2.sqrt(), None, "Hz");
    report.push("area", trapezoid(&inv.omega_hz, &inv.density), None, "");
    report.push("clipped_mass", inv.clipped_mass, None, "");
    report.push("masked_samples", inv.masked.len() as f64, None, "");
    if let Some(w) = cavity::fwhm_of_samples(&inv.omega_hz, &inv.density) {
        report.push("fwhm", w, None, "Hz");
    }
    emit.plot(
        "density.csv",
        &["freq_hz", "density_per_hz", "raw_per_hz"],
        &[&inv.omega_hz, &inv.density, &inv.raw],
    )?;
    emit.finish(&report)
}

fn cmd_simulate_sweep(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<SimulateSweepConfig>(&args.config)?;
    let mut emit = Emitter::new(args, "simulate-sweep", resolved)?;
    let lines = cfg.spins.lines()?;
    let g: Vec<f64> = match &cfg.g_ens_hz {
        PerLine::Same(v) => vec![*v; lines.len()],
        PerLine::Each(v) => {
            if v.len() != lines.len() {
                return Err(CliError::Usage(format!(
                    "{} couplings given for {} spin lines",
                    v.len(),
                    lines.len()
                )));
            }
            v.clone()
        }
    };
    let fields = cfg.fields_t.to_vec("fields_t")?;
    let freqs = cfg.freqs_hz.to_vec("freqs_hz")?;
    let mut map = sweep_map(&cfg.resonator, &lines, &g, cfg.gamma_fwhm_hz, &fields, &freqs)?;

    if cfg.noise_sigma < 0.0 {
        return Err(CliError::Usage(format!(
            "noise_sigma must be nonnegative, got {}",
            cfg.noise_sigma
        )));
    }
    if cfg.noise_sigma > 0.0 {
        let seed = args.seed.unwrap_or(0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, cfg.noise_sigma)
            .map_err(|e| CliError::Usage(format!("noise_sigma: {e}")))?;
        for row in &mut map.mags {
            for m in row {
                *m = (*m + dist.sample(&mut rng)).max(1e-9);
            }
        }
    }

    let mut report = Report::new("simulated-sweep", "simulate-sweep", &[]);
    for (line, &gi) in lines.iter().zip(&g) {
        report.push(&format!("g_ens[{}]", line.label), gi, None, "Hz");
    }
    report.push("gamma_fwhm", cfg.gamma_fwhm_hz, None, "Hz");
    report.push("noise_sigma", cfg.noise_sigma, None, "");
    emit.map("map.csv", &map)?;
    emit.finish(&report)
}

fn cmd_pulse_sim(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<PulseSimConfig>(&args.config)?;
    let mut emit = Emitter::new(args, "pulse-sim", resolved)?;
    match &cfg {
        PulseSimConfig::HahnEcho {
            tau_s,
            ensemble_fwhm_hz,
            relaxation,
            n_spins,
        } => {
            let echo = simulate_hahn_echo(*tau_s, *ensemble_fwhm_hz, &relaxation.to_params(), *n_spins)?;
            for w in &echo.warnings {
                eprintln!("warning: {w}");
            }
            let re: Vec<f64> = echo.m_perp.iter().map(|m| m.re).collect();
            let im: Vec<f64> = echo.m_perp.iter().map(|m| m.im).collect();
            let mag: Vec<f64> = echo.m_perp.iter().map(|m| m.norm()).collect();
            emit.plot(
                "echo.csv",
                &["time_s", "m_perp_re", "m_perp_im", "m_perp_abs"],
                &[&echo.times_s, &re, &im, &mag],
            )?;
            let mut report = Report::new("hahn-echo", "pulse-sim", &[]);
            report.push("tau", *tau_s, None, "s");
            report.push("ensemble_fwhm", *ensemble_fwhm_hz, None, "Hz");
            report.push("echo_time", echo.echo_time_s, None, "s");
            report.push("echo_amplitude", echo.echo_amplitude, None, "");
            report.push("n_spins", *n_spins as f64, None, "");
            emit.finish(&report)
        }
        PulseSimConfig::Sequence {
            sequence,
            relaxation,
            detuning_hz,
        } => {
            let traj = propagate_bloch(sequence, &relaxation.to_params(), *detuning_hz)?;
            let mx: Vec<f64> = traj.magnetization.iter().map(|m| m[0]).collect();
            let my: Vec<f64> = traj.magnetization.iter().map(|m| m[1]).collect();
            let mz: Vec<f64> = traj.magnetization.iter().map(|m| m[2]).collect();
            emit.plot(
                "trajectory.csv",
                &["time_s", "mx", "my", "mz"],
                &[&traj.times_s, &mx, &my, &mz],
            )?;
            let last = traj.magnetization.last().copied().unwrap_or([0.0; 3]);
            let mut report = Report::new("bloch-sequence", "pulse-sim", &[]);
            report.push("detuning", *detuning_hz, None, "Hz");
            report.push("final_mx", last[0], None, "");
            report.push("final_my", last[1], None, "");
            report.push("final_mz", last[2], None, "");
            report.push(
                "duration",
                traj.times_s.last().copied().unwrap_or(0.0),
                None,
                "s",
            );
            emit.finish(&report)
        }
    }
}

fn cmd_fit_t1(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<FitT1Config>(&args.config)?;
    let mut emit = Emitter::new(args, "fit-t1", resolved)?;
    let (t, y, skipped) = load_xy(Path::new(&cfg.data))?;
    if skipped > 0 {
        eprintln!("note: skipped {skipped} unparseable rows in {}", cfg.data);
    }
    emit.input(&cfg.data);
    let fit = fit_t1(&t, &y, cfg.init.as_ref().map(|i| (i.amplitude, i.t1_s)))?;
    let report = Report::from_fit("fit-t1", &[&cfg.data], &fit, unit_for);
    let t1 = fit.value("t1").expect("fit parameter");
    let amp = fit.value("amplitude").expect("fit parameter");
    let model: Vec<f64> = t
        .iter()
        .map(|&ti| saturation_recovery_model(ti, t1, amp))
        .collect();
    let residual: Vec<f64> = y.iter().zip(&model).map(|(d, m)| d - m).collect();
    emit.plot(
        "fit.csv",
        &["time_s", "data", "model", "residual"],
        &[&t, &y, &model, &residual],
    )?;
    emit.finish(&report)
}

fn cmd_fit_t2(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<FitT2Config>(&args.config)?;
    let mut emit = Emitter::new(args, "fit-t2", resolved)?;
    let (t, y, skipped) = load_xy(Path::new(&cfg.data))?;
    if skipped > 0 {
        eprintln!("note: skipped {skipped} unparseable rows in {}", cfg.data);
    }
    emit.input(&cfg.data);
    let fit = fit_t2(
        &t,
        &y,
        cfg.init.as_ref().map(|i| (i.amplitude, i.t2_s, i.stretch_p)),
    )?;
    let report = Report::from_fit("fit-t2", &[&cfg.data], &fit, unit_for);
    let t2 = fit.value("t2").expect("fit parameter");
    let p = fit.value("stretch_p").expect("fit parameter");
    let amp = fit.value("amplitude").expect("fit parameter");
    let model: Vec<f64> = t
        .iter()
        .map(|&ti| echo_decay_model(ti, t2, p, amp))
        .collect();
    let residual: Vec<f64> = y.iter().zip(&model).map(|(d, m)| d - m).collect();
    emit.plot(
        "fit.csv",
        &["two_tau_s", "data", "model", "residual"],
        &[&t, &y, &model, &residual],
    )?;
    emit.finish(&report)
}

fn cmd_design(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, resolved) = load_config::<DesignConfig>(&args.config)?;
    let emit = Emitter::new(args, "design", resolved)?;
    let (b_vac, volume) =
        design::DesignParams::resolve_field_volume(cfg.omega_r_hz, cfg.b_vac_t, cfg.mode_volume_m3)?;
    let g_single = design::single_spin_coupling(b_vac, cfg.g_factor)?;
    let polarization = cfg
        .temperature_k
        .map(|t| design::thermal_polarization(cfg.omega_r_hz, t))
        .unwrap_or(1.0);

    let mut report = Report::new("design-arithmetic", "design", &[]);
    report.push("b_vac", b_vac, None, "T");
    report.push("mode_volume", volume, None, "m^3");
    report.push("g_single", g_single, None, "Hz");
    report.push("polarization", polarization, None, "");
    if let Some(sample) = &cfg.sample {
        let n = design::spin_count(sample)?;
        let g_ens = design::ensemble_coupling(g_single, n, polarization)?;
        report.push("n_spins", n, None, "");
        report.push("g_ens", g_ens, None, "Hz");
    }
    if let Some(budget) = &cfg.budget {
        let params = design::DesignParams {
            omega_r_hz: cfg.omega_r_hz,
            b_vac_t: b_vac,
            mode_volume_m3: volume,
            epsilon_perp: budget.epsilon_perp,
            epsilon_par: budget.epsilon_par,
            tan_delta: budget.tan_delta,
            electric_filling: budget.electric_filling,
            magnetic_filling: budget.magnetic_filling,
            q_radiation: budget.q_radiation,
            q_conductor: budget.q_conductor,
        };
        let budget = design::loss_budget(&params)?;
        report.push("q_int", budget.q_int, None, "");
        report.push("dielectric_fraction", budget.dielectric_fraction, None, "");
        report.push("conductor_fraction", budget.conductor_fraction, None, "");
        report.push("radiation_fraction", budget.radiation_fraction, None, "");
    }
    emit.finish(&report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_configs_build_the_expected_lines() {
        let dpph = SpinConfig::Dpph { g_factor: None };
        let lines = dpph.lines().unwrap();
        assert_eq!(lines.len(), 1);
        // literature g-factor ~2.0036 → ~5.54 GHz at 197.6 mT
        let f = lines[0].frequency_at(0.1976);
        assert!((5.52e9..5.56e9).contains(&f), "f = {f}");

        let p1 = SpinConfig::P1 {
            axis: [1.0, 1.0, 1.0],
            field_direction: [0.0, 0.0, 1.0],
            drive_direction: [1.0, 0.0, 0.0],
        };
        let lines = p1.lines().unwrap();
        assert_eq!(lines.len(), 3);
        // hyperfine splits the manifolds by roughly ±A/2 ~ 50 MHz around
        // the electron line
        let at = |i: usize| lines[i].frequency_at(0.1976);
        assert!(at(0) > at(1) && at(1) > at(2), "{} {} {}", at(0), at(1), at(2));
        assert!((at(0) - at(2)) > 120e6 && (at(0) - at(2)) < 250e6);

        let bad = SpinConfig::P1 {
            axis: [0.0, 0.0, 0.0],
            field_direction: [0.0, 0.0, 1.0],
            drive_direction: [1.0, 0.0, 0.0],
        };
        assert!(bad.lines().is_err());
    }

    #[test]
    fn grid_specs_are_validated_and_inclusive() {
        let g = GridSpec {
            start: 1.0,
            stop: 2.0,
            count: 5,
        };
        let v = g.to_vec("x").unwrap();
        assert_eq!(v, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert!(GridSpec {
            start: 1.0,
            stop: 1.0,
            count: 5
        }
        .to_vec("x")
        .is_err());
        assert!(GridSpec {
            start: 0.0,
            stop: 1.0,
            count: 1
        }
        .to_vec("x")
        .is_err());
    }

    #[test]
    fn error_kinds_map_to_the_documented_exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Model("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        let parse = IoError::Parse {
            path: "f.csv".into(),
            line: 3,
            msg: "bad".into(),
        };
        assert_eq!(CliError::from(parse).exit_code(), 3);
        let missing = IoError::Io(std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(CliError::from(missing).exit_code(), 1);
    }

    #[test]
    fn units_are_attached_by_parameter_name() {
        assert_eq!(unit_for("omega_r"), "Hz");
        assert_eq!(unit_for("g_ens[m_I=+1]"), "Hz");
        assert_eq!(unit_for("t2"), "s");
        assert_eq!(unit_for("field_offset"), "T");
        assert_eq!(unit_for("phase"), "rad");
        assert_eq!(unit_for("amplitude"), "");
    }
}
