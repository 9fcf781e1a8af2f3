//! File formats: measurement files (CSV or JSON), run configuration
//! (TOML), grid fields (JSON), reports (JSON) and plot series (CSV).
//!
//! Every schema carries `format_version`; only version 1 exists.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{DistanceErrorModel, OctaveUncertaintyTable, UncertaintyBudget};
use crate::area::{AreaResult, SnqKind, UnicityReport};
use crate::error::Error;
use crate::field::GridField;
use crate::metrics::{validate_path, DecayFit, Diagnostic, MeasurementPath, MeasurementPosition, SnqOptions};
use crate::monte_carlo::{McConfig, McErrorModel, McResult};
use crate::spectrum::{OctaveSpectrum, NUM_BANDS};

pub const FORMAT_VERSION: u32 = 1;

/// Column names of the octave bands in CSV files.
pub const BAND_COLUMNS: [&str; NUM_BANDS] = ["L125", "L250", "L500", "L1000", "L2000", "L4000", "L8000"];

/// Where in the input a parse error was found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Location {
    pub line: Option<u64>,
    pub field: Option<String>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.field) {
            (Some(l), Some(c)) => write!(f, "line {l}, field '{c}'"),
            (Some(l), None) => write!(f, "line {l}"),
            (None, Some(c)) => write!(f, "field '{c}'"),
            (None, None) => f.write_str("input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{location}: {message}")]
pub struct ParseError {
    pub location: Location,
    pub message: String,
}

impl ParseError {
    fn new(message: impl Into<String>) -> Self {
        Self { location: Location::default(), message: message.into() }
    }

    fn at_line(line: Option<u64>, message: impl Into<String>) -> Self {
        Self { location: Location { line, field: None }, message: message.into() }
    }

    fn at_field(line: Option<u64>, field: &str, message: impl Into<String>) -> Self {
        Self { location: Location { line, field: Some(field.to_string()) }, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", .diagnostics.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
    #[error("invalid value: {0}")]
    Invalid(#[from] Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

pub type IoResult<T> = std::result::Result<T, IoError>;

pub fn read_text(path: &std::path::Path) -> IoResult<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    /// JSON when the first non-blank character opens an object.
    pub fn sniff(text: &str) -> Self {
        if text.trim_start().starts_with('{') {
            DataFormat::Json
        } else {
            DataFormat::Csv
        }
    }
}

/// Measurements of one acoustic area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub format_version: u32,
    #[serde(default)]
    pub area_id: String,
    pub paths: Vec<MeasurementPath>,
}

impl MeasurementFile {
    pub fn new(area_id: impl Into<String>, paths: Vec<MeasurementPath>) -> Self {
        Self { format_version: FORMAT_VERSION, area_id: area_id.into(), paths }
    }

    /// Runs the path checks; errors fail, warnings are returned.
    pub fn validate(&self) -> std::result::Result<Vec<Diagnostic>, ValidationError> {
        let mut diagnostics: Vec<Diagnostic> = self.paths.iter().flat_map(validate_path).collect();
        let mut ids: Vec<&str> = self.paths.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            diagnostics.push(Diagnostic {
                severity: crate::metrics::Severity::Error,
                code: crate::metrics::DiagnosticCode::DuplicatePositionId,
                message: format!("duplicate path id '{}'", w[0]),
            });
        }
        let (errors, warnings): (Vec<_>, Vec<_>) = diagnostics.into_iter().partition(Diagnostic::is_error);
        if errors.is_empty() {
            Ok(warnings)
        } else {
            Err(ValidationError { diagnostics: errors })
        }
    }
}

/// Parsed and validated measurements with the non-blocking warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMeasurements {
    pub file: MeasurementFile,
    pub warnings: Vec<Diagnostic>,
}

fn check_version(version: u32) -> std::result::Result<(), ParseError> {
    if version != FORMAT_VERSION {
        return Err(ParseError::at_field(None, "format_version", format!("unsupported format_version {version}")));
    }
    Ok(())
}

/// Parses measurement text in either format, then validates every path.
pub fn parse_measurement_file(text: &str, format: Option<DataFormat>) -> IoResult<ParsedMeasurements> {
    let file = match format.unwrap_or_else(|| DataFormat::sniff(text)) {
        DataFormat::Csv => parse_measurement_csv(text)?,
        DataFormat::Json => parse_measurement_json(text)?,
    };
    let warnings = file.validate()?;
    Ok(ParsedMeasurements { file, warnings })
}

pub fn parse_measurement_json(text: &str) -> std::result::Result<MeasurementFile, ParseError> {
    let file: MeasurementFile = serde_json::from_str(text).map_err(|e| ParseError {
        location: Location { line: Some(e.line() as u64), field: None },
        message: e.to_string(),
    })?;
    check_version(file.format_version)?;
    Ok(file)
}

/// `# key: value` metadata lines at the top of a CSV file.
fn csv_metadata(text: &str) -> std::result::Result<(u32, String), ParseError> {
    let mut version = None;
    let mut area_id = String::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(meta) = line.strip_prefix('#') else { break };
        if let Some((key, value)) = meta.split_once(':') {
            match key.trim() {
                "format_version" => {
                    let v = value.trim().parse::<u32>().map_err(|_| {
                        ParseError::at_field(
                            Some(i as u64 + 1),
                            "format_version",
                            format!("not an integer: '{}'", value.trim()),
                        )
                    })?;
                    version = Some(v);
                }
                "area_id" => area_id = value.trim().to_string(),
                _ => {}
            }
        }
    }
    let version = version.ok_or_else(|| ParseError::new("missing '# format_version: 1' header line"))?;
    check_version(version)?;
    Ok((version, area_id))
}

fn parse_number(raw: &str, line: Option<u64>, field: &str) -> std::result::Result<f64, ParseError> {
    let v: f64 = raw.trim().parse().map_err(|_| ParseError::at_field(line, field, format!("not a number: '{raw}'")))?;
    if !v.is_finite() {
        return Err(ParseError::at_field(line, field, format!("non-finite value '{raw}'")));
    }
    Ok(v)
}

/// CSV layout: metadata comment lines, then the header
/// `path_id,position_id,distance_m,L125,...,L8000` and one row per
/// position. Rows of a path are grouped in order of first appearance.
/// An empty cell or `-` marks an absent band.
pub fn parse_measurement_csv(text: &str) -> std::result::Result<MeasurementFile, ParseError> {
    let (format_version, area_id) = csv_metadata(text)?;
    let mut reader =
        csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());

    let header_line =
        text.lines().position(|l| !(l.trim().is_empty() || l.trim_start().starts_with('#'))).map(|i| i as u64 + 1);
    let headers =
        reader.headers().map_err(|e| ParseError::at_line(e.position().map(|p| p.line()), e.to_string()))?.clone();
    let bands = headers.len().saturating_sub(3);
    if bands != NUM_BANDS {
        return Err(ParseError::at_line(
            header_line,
            format!("expected {NUM_BANDS} octave bands, found {bands} band columns"),
        ));
    }
    for (i, want) in ["path_id", "position_id", "distance_m"].iter().chain(BAND_COLUMNS.iter()).enumerate() {
        if &headers[i] != *want {
            return Err(ParseError::at_field(header_line, &headers[i], format!("expected column '{want}'")));
        }
    }

    let mut paths: Vec<MeasurementPath> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ParseError::at_line(e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map(|p| p.line());
        if record.len() != 3 + NUM_BANDS {
            return Err(ParseError::at_line(
                line,
                format!("expected {NUM_BANDS} octave bands, found {} band values", record.len().saturating_sub(3)),
            ));
        }
        let path_id = &record[0];
        if path_id.is_empty() {
            return Err(ParseError::at_field(line, "path_id", "empty path id"));
        }
        let distance = parse_number(&record[2], line, "distance_m")?;
        let mut levels = [None; NUM_BANDS];
        for (band, slot) in levels.iter_mut().enumerate() {
            let cell = &record[3 + band];
            if !(cell.is_empty() || cell == "-") {
                *slot = Some(parse_number(cell, line, BAND_COLUMNS[band])?);
            }
        }
        let spectrum = OctaveSpectrum::with_absent(levels).map_err(|e| ParseError::at_line(line, e.to_string()))?;
        let position = MeasurementPosition::new(&record[1], distance, spectrum);
        match paths.iter_mut().find(|p| p.id == path_id) {
            Some(p) => p.positions.push(position),
            None => paths.push(MeasurementPath::new(path_id, vec![position])),
        }
    }
    if paths.is_empty() {
        return Err(ParseError::new("no measurement rows"));
    }
    Ok(MeasurementFile { format_version, area_id, paths })
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("writing CSV to memory cannot fail");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
}

pub fn write_measurement_csv(file: &MeasurementFile) -> String {
    let mut out = format!("# format_version: {}\n", file.format_version);
    if !file.area_id.is_empty() {
        let _ = writeln!(out, "# area_id: {}", file.area_id);
    }
    out + &csv_string(|w| {
        let mut header = vec!["path_id", "position_id", "distance_m"];
        header.extend(BAND_COLUMNS);
        w.write_record(&header)?;
        for path in &file.paths {
            for p in &path.positions {
                let mut row = vec![path.id.clone(), p.id.clone(), num(p.distance_m)];
                row.extend(p.spectrum.levels().iter().map(|l| l.map(num).unwrap_or_default()));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

pub fn write_measurement_json(file: &MeasurementFile) -> String {
    serde_json::to_string_pretty(file).expect("measurement file serializes")
}

pub fn write_measurement(file: &MeasurementFile, format: DataFormat) -> String {
    match format {
        DataFormat::Csv => write_measurement_csv(file),
        DataFormat::Json => write_measurement_json(file),
    }
}

/// Run configuration overrides. Every field is optional; absent fields
/// keep the built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub format_version: Option<u32>,
    pub threshold_dba: Option<f64>,
    pub coverage_k: Option<f64>,
    #[serde(default)]
    pub level: LevelSection,
    #[serde(default)]
    pub distance: DistanceSection,
    #[serde(default)]
    pub mc: McSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSection {
    /// Per-octave level uncertainties, dB.
    pub octave_uncertainty_db: Option<[f64; NUM_BANDS]>,
    /// Same A-weighted level uncertainty at every position, bypassing the
    /// octave table.
    pub homogeneous_u_dba: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSection {
    pub u_tape_m: Option<f64>,
    pub square_side_m: Option<f64>,
    pub square_coverage: Option<f64>,
    pub include_positioning: Option<bool>,
    /// Total distance uncertainty for the closed-form expressions,
    /// replacing the value derived from the model.
    pub u_r_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub min_batches: Option<usize>,
    pub max_batches: Option<usize>,
    pub tol_level_db: Option<f64>,
    pub tol_rc_m: Option<f64>,
    pub couple_positioning: Option<bool>,
    pub shared_source_offset: Option<bool>,
}

/// Fully resolved settings for a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub snq: SnqOptions,
    pub octave_table: OctaveUncertaintyTable,
    pub dist_model: DistanceErrorModel,
    pub homogeneous_u_dba: Option<f64>,
    pub u_r_override_m: Option<f64>,
    pub mc_model: McErrorModel,
    pub mc: McConfig,
}

impl RunSettings {
    /// Distance uncertainty used by the closed-form expressions.
    pub fn u_r_m(&self) -> f64 {
        self.u_r_override_m.unwrap_or_else(|| self.dist_model.u_r_total_m())
    }

    pub fn validate(&self) -> crate::Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !self.snq.threshold_dba.is_finite() {
            return Err(Error::InvalidInput(format!("threshold must be finite, got {}", self.snq.threshold_dba)));
        }
        if !finite_pos(self.mc.coverage_k) {
            return Err(Error::InvalidInput(format!("coverage factor must be > 0, got {}", self.mc.coverage_k)));
        }
        OctaveUncertaintyTable::new(*self.octave_table.values())?;
        self.dist_model.validate()?;
        if let Some(u) = self.homogeneous_u_dba {
            if !(u.is_finite() && u >= 0.0) {
                return Err(Error::InvalidInput(format!("homogeneous level uncertainty must be >= 0, got {u}")));
            }
        }
        if let Some(u) = self.u_r_override_m {
            if !(u.is_finite() && u >= 0.0) {
                return Err(Error::InvalidInput(format!("distance uncertainty must be >= 0, got {u}")));
            }
        }
        self.mc_model.validate()?;
        self.mc.validate()
    }
}

impl RunConfigFile {
    pub fn from_toml(text: &str) -> IoResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1) as u64);
            ParseError::at_line(line, e.message().to_string())
        })?;
        if let Some(v) = cfg.format_version {
            check_version(v)?;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Applies the overrides to the defaults and validates the result.
    pub fn resolve(&self) -> crate::Result<RunSettings> {
        let mut s = RunSettings::default();
        if let Some(t) = self.threshold_dba {
            s.snq.threshold_dba = t;
        }
        if let Some(k) = self.coverage_k {
            s.mc.coverage_k = k;
        }
        if let Some(t) = self.level.octave_uncertainty_db {
            s.octave_table = OctaveUncertaintyTable::new(t)?;
        }
        s.homogeneous_u_dba = self.level.homogeneous_u_dba;
        let d = &self.distance;
        if let Some(v) = d.u_tape_m {
            s.dist_model.u_tape_m = v;
        }
        if let Some(v) = d.square_side_m {
            s.dist_model.square_side_m = v;
        }
        if let Some(v) = d.square_coverage {
            s.dist_model.square_coverage = v;
        }
        if let Some(v) = d.include_positioning {
            s.dist_model.include_positioning = v;
        }
        s.u_r_override_m = d.u_r_m;
        s.dist_model.validate()?;

        s.mc_model = McErrorModel::from_models(s.octave_table, s.dist_model);
        let m = &self.mc;
        if let Some(v) = m.couple_positioning {
            s.mc_model.couple_levels_to_position = v;
        }
        if let Some(v) = m.shared_source_offset {
            s.mc_model.shared_source_offset = v;
        }
        if let Some(v) = m.seed {
            s.mc.seed = v;
        }
        if let Some(v) = m.batch_size {
            s.mc.batch_size = v;
        }
        if let Some(v) = m.min_batches {
            s.mc.min_batches = v;
        }
        if let Some(v) = m.max_batches {
            s.mc.max_batches = v;
        }
        if let Some(v) = m.tol_level_db {
            s.mc.convergence_tol_level_db = v;
        }
        if let Some(v) = m.tol_rc_m {
            s.mc.convergence_tol_rc_m = v;
        }
        s.validate()?;
        Ok(s)
    }
}

pub fn parse_grid_json(text: &str) -> IoResult<GridField> {
    let grid: GridField = serde_json::from_str(text).map_err(|e| ParseError {
        location: Location { line: Some(e.line() as u64), field: None },
        message: e.to_string(),
    })?;
    check_version(grid.format_version)?;
    grid.validate()?;
    Ok(grid)
}

pub fn write_grid_json(grid: &GridField) -> String {
    serde_json::to_string(grid).expect("grid serializes")
}

/// Results for one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub path_id: String,
    pub distances_m: Vec<f64>,
    pub levels_dba: Vec<f64>,
    pub fit: DecayFit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<UncertaintyBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McResult>,
}

/// Machine-readable output of every subcommand. Raw values are kept; only
/// the human-readable text rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub area_id: String,
    pub threshold_dba: f64,
    pub coverage_k: f64,
    pub paths: Vec<PathReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<AreaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unicity: Option<UnicityReport>,
}

impl Report {
    pub fn new(area_id: impl Into<String>, threshold_dba: f64, coverage_k: f64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            area_id: area_id.into(),
            threshold_dba,
            coverage_k,
            paths: Vec::new(),
            area: None,
            unicity: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> IoResult<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| ParseError {
            location: Location { line: Some(e.line() as u64), field: None },
            message: e.to_string(),
        })?;
        check_version(report.format_version)?;
        Ok(report)
    }
}

const DECAY_LINE_POINTS: usize = 32;

/// Measured points and the fitted line of every path:
/// `path_id,kind,distance_m,level_dba` with `kind` = `measured` or `fitted`.
/// The line spans the measured distances and, when farther, `rc`.
pub fn decay_plot_csv(report: &Report) -> String {
    csv_string(|w| {
        w.write_record(["path_id", "kind", "distance_m", "level_dba"])?;
        for p in &report.paths {
            for (r, l) in p.distances_m.iter().zip(&p.levels_dba) {
                w.write_record([p.path_id.as_str(), "measured", &num(*r), &num(*l)])?;
            }
            let lo = p.distances_m.iter().copied().fold(f64::INFINITY, f64::min);
            let mut hi = p.distances_m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if p.fit.snq.rc_m.is_finite() && p.fit.snq.rc_m > hi && p.fit.snq.rc_m < 16.0 * hi {
                hi = p.fit.snq.rc_m;
            }
            for i in 0..DECAY_LINE_POINTS {
                let t = i as f64 / (DECAY_LINE_POINTS - 1) as f64;
                let r = lo * (hi / lo).powf(t);
                w.write_record([p.path_id.as_str(), "fitted", &num(r), &num(p.fit.fitted_level(r))])?;
            }
        }
        Ok(())
    })
}

/// Per-path intervals, and the pooled interval when an area was analysed:
/// `path_id,quantity,method,center,half_width,lower,upper`.
pub fn interval_plot_csv(report: &Report) -> String {
    csv_string(|w| {
        w.write_record(["path_id", "quantity", "method", "center", "half_width", "lower", "upper"])?;
        let k = report.coverage_k;
        let mut row = |id: &str, kind: SnqKind, method: &str, c: f64, h: f64| {
            w.write_record([id, kind.name(), method, &num(c), &num(h), &num(c - h), &num(c + h)])
        };
        for p in &report.paths {
            for kind in SnqKind::ALL {
                let center = kind.value(&p.fit.snq);
                if let Some(b) = &p.budget {
                    let u = match kind {
                        SnqKind::D2s => b.d2s.u,
                        SnqKind::Lpas4m => b.lpas4m.u,
                        SnqKind::Rc => b.rc.u,
                    };
                    row(&p.path_id, kind, "analytic", center, k * u)?;
                }
                if let Some(mc) = &p.mc {
                    let s = match kind {
                        SnqKind::D2s => &mc.d2s,
                        SnqKind::Lpas4m => &mc.lpas4m,
                        SnqKind::Rc => &mc.rc,
                    };
                    row(&p.path_id, kind, "monte_carlo", s.mean, mc.coverage_k * s.std_dev)?;
                }
            }
        }
        if let Some(area) = &report.area {
            for kind in SnqKind::ALL {
                let pool = area.pooling(kind);
                row("pooled", kind, "pooled", pool.pooled_mean, pool.half_width)?;
            }
        }
        Ok(())
    })
}

/// Monte-Carlo histograms: `path_id,quantity,lower,upper,count`.
pub fn histogram_plot_csv(report: &Report) -> String {
    csv_string(|w| {
        w.write_record(["path_id", "quantity", "lower", "upper", "count"])?;
        for p in &report.paths {
            let Some(mc) = &p.mc else { continue };
            for (kind, stats) in [(SnqKind::D2s, &mc.d2s), (SnqKind::Lpas4m, &mc.lpas4m), (SnqKind::Rc, &mc.rc)] {
                for (lo, hi, count) in stats.histogram.bins() {
                    w.write_record([p.path_id.as_str(), kind.name(), &num(lo), &num(hi), &count.to_string()])?;
                }
            }
        }
        Ok(())
    })
}
