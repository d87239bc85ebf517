//! File interfaces: CSV ingestion of reflection traces, field-sweep maps
//! and relaxation curves; JSON reports and run manifests; columnar plot
//! data. All writes go through a temp-file-then-rename so a crash never
//! leaves a half-written artifact behind.
//!
//! Numbers are SI base units (Hz, tesla, seconds) unless a column header
//! carries a unit suffix (`freq_GHz`, `time_ms`), which is converted at
//! parse time and never downstream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::{
    CavityError, ComplexTrace, FieldSweepMap, MagnitudeTrace, Trace, TraceMetadata,
};
use crate::fit::FitResult;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trace(#[from] CavityError),
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Column layout of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    /// `freq, re, im`
    ReIm,
    /// `freq, mag_dB` — converted as 10^(dB/20); magnitude only.
    MagDb,
    /// `freq, mag_linear, phase_deg`
    MagPhaseDeg,
}

impl TraceFormat {
    fn columns(self) -> usize {
        match self {
            TraceFormat::MagDb => 2,
            TraceFormat::ReIm | TraceFormat::MagPhaseDeg => 3,
        }
    }
}

/// A parsed trace plus where it came from and what was discarded.
#[derive(Debug, Clone)]
pub struct TraceFile {
    pub trace: Trace,
    pub path: String,
    pub format: TraceFormat,
    /// Comment or non-numeric rows dropped during parsing.
    pub skipped_rows: usize,
}

/// Multiplier that converts a value in the suffixed unit to the SI base
/// unit, from a header token like `freq_GHz` or `time_ms`. No suffix (or an
/// unknown one) means the value is already in base units.
fn unit_scale(header_token: &str) -> f64 {
    let suffix = match header_token.rsplit_once('_') {
        Some((_, s)) => s.to_ascii_lowercase(),
        None => return 1.0,
    };
    match suffix.as_str() {
        "ghz" => 1e9,
        "mhz" => 1e6,
        "khz" => 1e3,
        "ms" => 1e-3,
        "us" => 1e-6,
        "ns" => 1e-9,
        _ => 1.0,
    }
}

fn split_row(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn is_numeric_row(fields: &[&str]) -> bool {
    !fields.is_empty() && fields.iter().all(|f| f.parse::<f64>().is_ok())
}

/// Lines of a CSV body with their 1-based numbers, comments (`#`) and blank
/// lines dropped; if the first surviving line is non-numeric it is treated
/// as a header and returned separately.
fn csv_lines(text: &str) -> (Option<(usize, Vec<String>)>, Vec<(usize, String)>) {
    let mut header = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if rows.is_empty() && header.is_none() && !is_numeric_row(&split_row(line)) {
            header = Some((i + 1, split_row(line).iter().map(|s| s.to_string()).collect()));
            continue;
        }
        rows.push((i + 1, line.to_string()));
    }
    (header, rows)
}

/// Parse a reflection-trace CSV with the declared column layout.
///
/// Comment lines and rows that fail to parse are skipped (counted in the
/// result); out-of-order or duplicate frequencies are an error naming the
/// offending line, as is ending up with fewer than two valid rows.
pub fn load_trace(path: &Path, format: TraceFormat) -> Result<TraceFile, IoError> {
    let text = fs::read_to_string(path)?;
    let (header, rows) = csv_lines(&text);
    let freq_scale = header
        .as_ref()
        .and_then(|(_, cols)| cols.first().map(|c| unit_scale(c)))
        .unwrap_or(1.0);

    let mut freqs = Vec::new();
    let mut values = Vec::new();
    let mut skipped = 0usize;
    let mut prev: Option<f64> = None;
    for (line_no, line) in &rows {
        let fields = split_row(line);
        if fields.len() != format.columns() || !is_numeric_row(&fields) {
            skipped += 1;
            continue;
        }
        let nums: Vec<f64> = fields.iter().map(|f| f.parse().unwrap()).collect();
        let f = nums[0] * freq_scale;
        if let Some(p) = prev {
            if f <= p {
                return Err(parse_err(
                    path,
                    *line_no,
                    format!("frequency {f} does not increase past {p}"),
                ));
            }
        }
        prev = Some(f);
        freqs.push(f);
        values.push(match format {
            TraceFormat::ReIm => Complex64::new(nums[1], nums[2]),
            TraceFormat::MagDb => Complex64::new(10f64.powf(nums[1] / 20.0), 0.0),
            TraceFormat::MagPhaseDeg => Complex64::from_polar(nums[1], nums[2].to_radians()),
        });
    }
    if freqs.len() < 2 {
        return Err(parse_err(
            path,
            rows.last().map(|(n, _)| *n).unwrap_or(1),
            format!("need at least 2 valid data rows, found {}", freqs.len()),
        ));
    }

    let trace = match format {
        TraceFormat::MagDb => Trace::Magnitude(MagnitudeTrace {
            freqs_hz: freqs,
            mags: values.iter().map(|v| v.re).collect(),
            metadata: TraceMetadata::default(),
        }),
        _ => Trace::Complex(ComplexTrace {
            freqs_hz: freqs,
            values,
            metadata: TraceMetadata::default(),
        }),
    };
    trace.validate()?;
    Ok(TraceFile {
        trace,
        path: path.display().to_string(),
        format,
        skipped_rows: skipped,
    })
}

/// A parsed field-sweep map (magnitudes converted to linear scale).
#[derive(Debug, Clone)]
pub struct FieldMapFile {
    pub map: FieldSweepMap,
    pub path: String,
    /// Body was declared in dB and converted.
    pub was_db: bool,
    /// Single-field map: legal, but unusable for crossing fits.
    pub degenerate: bool,
}

/// Parse a field-sweep grid: header = blank-or-tag cell followed by the
/// frequency axis in Hz, each body row = field (tesla) followed by one
/// magnitude per frequency. The corner tag declares the magnitude scale:
/// empty or `mag_db` for dB (converted as 10^(dB/20)), `mag_linear` for
/// linear. Ragged or malformed rows are an error naming the line.
pub fn load_field_map(path: &Path) -> Result<FieldMapFile, IoError> {
    let text = fs::read_to_string(path)?;
    let (header, rows) = csv_lines(&text);
    // The header of a map is its first non-comment line even when the
    // corner cell is empty (which parses as non-numeric anyway).
    let (header_line, header_cells) = match header {
        Some(h) => h,
        None => {
            let line = rows.first().map(|(n, _)| *n).unwrap_or(1);
            return Err(parse_err(path, line, "missing frequency header row"));
        }
    };
    let corner = header_cells.first().map(String::as_str).unwrap_or("");
    let was_db = match corner.to_ascii_lowercase().as_str() {
        "" | "mag_db" => true,
        "mag_linear" => false,
        other => {
            return Err(parse_err(
                path,
                header_line,
                format!("unknown magnitude scale tag {other:?}; use mag_db, mag_linear, or leave blank"),
            ))
        }
    };
    let freqs_hz: Vec<f64> = header_cells[1..]
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            cell.parse::<f64>().map_err(|_| {
                parse_err(
                    path,
                    header_line,
                    format!("frequency column {} is not a number: {cell:?}", j + 1),
                )
            })
        })
        .collect::<Result<_, _>>()?;

    let mut fields_t = Vec::new();
    let mut mags = Vec::new();
    for (line_no, line) in &rows {
        let cells = split_row(line);
        if cells.len() != freqs_hz.len() + 1 {
            return Err(parse_err(
                path,
                *line_no,
                format!(
                    "row has {} cells, expected {} (field + one magnitude per frequency)",
                    cells.len(),
                    freqs_hz.len() + 1
                ),
            ));
        }
        let nums: Vec<f64> = cells
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    parse_err(path, *line_no, format!("cell {} is not a number: {cell:?}", j + 1))
                })
            })
            .collect::<Result<_, _>>()?;
        let b = nums[0];
        if let Some(&p) = fields_t.last() {
            if b <= p {
                return Err(parse_err(
                    path,
                    *line_no,
                    format!("field {b} does not increase past {p}"),
                ));
            }
        }
        fields_t.push(b);
        let row: Vec<f64> = if was_db {
            nums[1..].iter().map(|&db| 10f64.powf(db / 20.0)).collect()
        } else {
            nums[1..].to_vec()
        };
        mags.push(row);
    }

    let map = FieldSweepMap {
        fields_t,
        freqs_hz,
        mags,
    };
    map.validate()?;
    let degenerate = map.fields_t.len() < 2;
    Ok(FieldMapFile {
        map,
        path: path.display().to_string(),
        was_db,
        degenerate,
    })
}

/// Write a field-sweep map in the grid convention [`load_field_map`] reads;
/// magnitudes are emitted in dB.
pub fn write_field_map(path: &Path, map: &FieldSweepMap) -> Result<(), IoError> {
    map.validate()?;
    let mut out = String::new();
    out.push_str("mag_db");
    for f in &map.freqs_hz {
        let _ = write!(out, ",{f}");
    }
    out.push('\n');
    for (b, row) in map.fields_t.iter().zip(&map.mags) {
        let _ = write!(out, "{b}");
        for m in row {
            let _ = write!(out, ",{}", 20.0 * m.max(f64::MIN_POSITIVE).log10());
        }
        out.push('\n');
    }
    write_atomic(path, &out)?;
    Ok(())
}

/// Parse a two-column CSV (`x, y`), e.g. a relaxation curve. Same comment
/// and skip rules as [`load_trace`]; a `time_ms`-style header suffix on the
/// first column is converted to seconds.
pub fn load_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>, usize), IoError> {
    let text = fs::read_to_string(path)?;
    let (header, rows) = csv_lines(&text);
    let x_scale = header
        .as_ref()
        .and_then(|(_, cols)| cols.first().map(|c| unit_scale(c)))
        .unwrap_or(1.0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut skipped = 0usize;
    for (_line_no, line) in &rows {
        let fields = split_row(line);
        if fields.len() != 2 || !is_numeric_row(&fields) {
            skipped += 1;
            continue;
        }
        x.push(fields[0].parse::<f64>().unwrap() * x_scale);
        y.push(fields[1].parse::<f64>().unwrap());
    }
    if x.is_empty() {
        return Err(parse_err(path, 1, "no valid data rows"));
    }
    Ok((x, y, skipped))
}

/// One fitted or derived quantity in a report.
#[derive(Debug, Clone, Serialize)]
pub struct ParamEntry {
    pub value: f64,
    /// One-standard-deviation uncertainty; absent for fixed or derived
    /// quantities with no estimate.
    pub sigma: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: String,
    pub inputs: Vec<String>,
    pub package: String,
}

/// Machine-readable result document, deterministic for identical inputs
/// (no timestamps; parameters keyed and ordered by name).
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub model: String,
    pub parameters: BTreeMap<String, ParamEntry>,
    pub residual_rss: Option<f64>,
    pub convergence: Option<String>,
    pub provenance: Provenance,
}

impl Report {
    pub fn new(model: impl Into<String>, command: &str, inputs: &[&str]) -> Self {
        Report {
            model: model.into(),
            parameters: BTreeMap::new(),
            residual_rss: None,
            convergence: None,
            provenance: Provenance {
                command: command.to_string(),
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
                package: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"))
                    .to_string(),
            },
        }
    }

    /// Start from a fit: copies every parameter (a zero sigma, as reported
    /// for fixed parameters, becomes "no estimate"), the residual, and the
    /// convergence status. Units are looked up by parameter name.
    pub fn from_fit(
        command: &str,
        inputs: &[&str],
        fit: &FitResult,
        unit_of: impl Fn(&str) -> &'static str,
    ) -> Self {
        let mut report = Report::new(fit.model.to_string(), command, inputs);
        for (i, name) in fit.names.iter().enumerate() {
            report.push(
                name,
                fit.values[i],
                (fit.sigmas[i] > 0.0).then_some(fit.sigmas[i]),
                unit_of(name),
            );
        }
        report.residual_rss = Some(fit.rss);
        report.convergence = Some(fit.convergence.to_string());
        report
    }

    pub fn push(&mut self, name: &str, value: f64, sigma: Option<f64>, unit: &str) {
        self.parameters.insert(
            name.to_string(),
            ParamEntry {
                value,
                sigma,
                unit: unit.to_string(),
            },
        );
    }
}

/// Everything that influenced a run: the fully resolved configuration
/// (defaults applied), inputs, outputs, seed, and the one timestamp the
/// toolchain emits anywhere.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub package: String,
    pub seed: Option<u64>,
    pub unix_time_s: u64,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Manifest {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            package: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            seed,
            unix_time_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Serialize as pretty JSON with a trailing newline and write atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)?;
    Ok(())
}

/// Write named columns as CSV (plot data consumable by any tool).
pub fn write_columns(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<(), IoError> {
    assert_eq!(headers.len(), columns.len(), "one header per column");
    let n = columns.first().map(|c| c.len()).unwrap_or(0);
    assert!(
        columns.iter().all(|c| c.len() == n),
        "plot columns must have equal length"
    );
    let mut out = headers.join(",");
    out.push('\n');
    for i in 0..n {
        for (j, col) in columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", col[i]);
        }
        out.push('\n');
    }
    write_atomic(path, &out)?;
    Ok(())
}

/// Write through a sibling temp file and rename over the target.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}
