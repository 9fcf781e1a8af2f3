use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;

use snq_core::analytic::{analytic_budget, covariance_form_budget, LevelUncertaintyVector, UncertaintyBudget};
use snq_core::area::{pool_area, round_up_tenth, unicity_report, PathResult};
use snq_core::field::{
    grid_from_loglinear, synth_office, FieldProvider, GridPlane, HalfPlane, HomogeneousField, LevelStep,
    OfficeConfigSpec, OfficeLabel, PathGeometry,
};
use snq_core::io::{
    decay_plot_csv, histogram_plot_csv, interval_plot_csv, parse_grid_json, parse_measurement_file, read_text,
    write_grid_json, write_measurement, DataFormat, MeasurementFile, PathReport, Report, RunConfigFile, RunSettings,
};
use snq_core::metrics::{compute_snq, MeasurementPath};
use snq_core::monte_carlo::{run_mc, McResult};

use crate::{CliError, GlobalOpts, Method, Switch};

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    Ok(read_text(path)?)
}

fn write(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Configuration file values, then command-line overrides.
fn settings(g: &GlobalOpts) -> CliResult<RunSettings> {
    let file = match &g.config {
        Some(p) => RunConfigFile::from_toml(&read(p)?)?,
        None => RunConfigFile::default(),
    };
    let mut s = file.resolve()?;
    if let Some(t) = g.threshold {
        s.snq.threshold_dba = t;
    }
    if let Some(k) = g.coverage_k {
        s.mc.coverage_k = k;
    }
    if let Some(seed) = g.seed {
        s.mc.seed = seed;
    }
    if let Some(n) = g.runs {
        s.mc.batch_size = n;
    }
    if let Some(c) = g.couple_positioning {
        s.mc_model.couple_levels_to_position = c == Switch::On;
    }
    s.validate()?;
    Ok(s)
}

fn load(g: &GlobalOpts, input: &Path) -> CliResult<MeasurementFile> {
    let parsed = parse_measurement_file(&read(input)?, g.format.map(DataFormat::from))?;
    for w in &parsed.warnings {
        let code = serde_json::to_value(w.code).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        eprintln!("snq: warning[{code}]: {}", w.message);
    }
    Ok(parsed.file)
}

fn path_report(path: &MeasurementPath, s: &RunSettings) -> CliResult<PathReport> {
    let data = path.decay_data()?;
    Ok(PathReport {
        path_id: path.id.clone(),
        distances_m: data.distances_m,
        levels_dba: data.levels_dba,
        fit: compute_snq(path, &s.snq)?,
        budget: None,
        mc: None,
    })
}

fn budget(path: &MeasurementPath, s: &RunSettings) -> CliResult<UncertaintyBudget> {
    let data = path.decay_data()?;
    let u_l = match s.homogeneous_u_dba {
        Some(u) => LevelUncertaintyVector::homogeneous(path.len(), u),
        None => LevelUncertaintyVector::from_path(path, &s.octave_table),
    };
    let b = match s.u_r_override_m {
        Some(u_r) => covariance_form_budget(&data, &u_l, u_r, &s.snq)?,
        None => analytic_budget(&data, &u_l, &s.dist_model, &s.snq)?,
    };
    Ok(b)
}

fn monte_carlo(path: &MeasurementPath, field: &dyn FieldProvider, s: &RunSettings) -> CliResult<McResult> {
    if field.num_positions() != path.len() {
        return Err(CliError::Validation(format!(
            "field has {} positions but path '{}' has {}",
            field.num_positions(),
            path.id,
            path.len()
        )));
    }
    Ok(run_mc(field, path, &s.mc_model, &s.mc, &s.snq)?.without_samples())
}

fn new_report(file: &MeasurementFile, s: &RunSettings) -> Report {
    Report::new(file.area_id.clone(), s.snq.threshold_dba, s.mc.coverage_k)
}

fn finish(report: &Report, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => write(p, &report.to_json()),
        None => Ok(()),
    }
}

pub fn compute(g: &GlobalOpts, input: &Path, out: Option<&Path>) -> CliResult {
    let s = settings(g)?;
    let file = load(g, input)?;
    let mut report = new_report(&file, &s);
    for path in &file.paths {
        let p = path_report(path, &s)?;
        println!("{}: {}", p.path_id, p.fit.snq);
        report.paths.push(p);
    }
    finish(&report, out)
}

fn print_component(name: &str, unit: &str, c: &snq_core::analytic::ComponentUncertainty) {
    println!(
        "  u({name}) = {:.2} {unit} (reported {:.1}; u² from levels {:.6}, from distances {:.6})",
        c.u,
        round_up_tenth(c.u),
        c.u2_level,
        c.u2_distance
    );
}

fn print_budget(id: &str, b: &UncertaintyBudget) {
    println!("{id}: {}", b.snq);
    print_component("D2S", "dB(A)", &b.d2s);
    print_component("LpAS4m", "dB(A)", &b.lpas4m);
    print_component("rc", "m", &b.rc);
    if let Some(t) = &b.terms {
        // Round-off residue would otherwise print as -0.000000.
        let c = |v: f64| if v.abs() < 5e-7 { 0.0 } else { v };
        println!(
            "  terms: T3 = {:.6}, T4 = {:.6}, T5 = {:.6}, T6 = {:.6}; u_r = {:.4} m",
            c(t.t3),
            c(t.t4),
            c(t.t5),
            c(t.t6),
            b.u_r_m
        );
    }
}

pub fn uncertainty(g: &GlobalOpts, input: &Path, out: Option<&Path>) -> CliResult {
    let s = settings(g)?;
    let file = load(g, input)?;
    let mut report = new_report(&file, &s);
    for path in &file.paths {
        let mut p = path_report(path, &s)?;
        let b = budget(path, &s)?;
        print_budget(&p.path_id, &b);
        p.budget = Some(b);
        report.paths.push(p);
    }
    finish(&report, out)
}

fn print_mc(id: &str, mc: &McResult) {
    println!(
        "{id}: {} runs in {} batches, {}",
        mc.runs_used,
        mc.batches,
        if mc.converged { "converged" } else { "NOT converged" }
    );
    for (name, unit, st) in [("D2S", "dB(A)", &mc.d2s), ("LpAS4m", "dB(A)", &mc.lpas4m), ("rc", "m", &mc.rc)] {
        let normal = match &st.normality {
            Some(n) if n.is_normal => "normal",
            Some(_) => "not normal",
            None => "normality not assessed",
        };
        println!(
            "  {name} = {:.2} {unit}, u = {:.2} (reported {:.1}), {normal}",
            st.mean,
            st.std_dev,
            round_up_tenth(st.std_dev)
        );
    }
}

pub fn mc(g: &GlobalOpts, input: &Path, field: Option<&Path>, out: Option<&Path>) -> CliResult {
    let s = settings(g)?;
    let file = load(g, input)?;
    let grid = match field {
        Some(p) => {
            if file.paths.len() != 1 {
                return Err(CliError::Validation(format!(
                    "--field needs a single-path input, got {} paths",
                    file.paths.len()
                )));
            }
            Some(parse_grid_json(&read(p)?)?)
        }
        None => None,
    };
    let mut report = new_report(&file, &s);
    for path in &file.paths {
        let mut p = path_report(path, &s)?;
        let result = match &grid {
            Some(grid) => monte_carlo(path, grid, &s)?,
            None => {
                info!("path '{}': no field file, using the nominal levels as a uniform field", path.id);
                monte_carlo(path, &HomogeneousField::from_path(path), &s)?
            }
        };
        print_mc(&p.path_id, &result);
        p.mc = Some(result);
        report.paths.push(p);
    }
    finish(&report, out)
}

fn area_results(
    file: &MeasurementFile,
    s: &RunSettings,
    method: Method,
    report: &mut Report,
) -> CliResult<Vec<PathResult>> {
    let mut results = Vec::new();
    for path in &file.paths {
        let mut p = path_report(path, s)?;
        let b = budget(path, s)?;
        p.budget = Some(b);
        let r = match method {
            Method::Analytic => PathResult::analytic(&path.id, b, s.mc.coverage_k),
            Method::Mc => {
                let mc = monte_carlo(path, &HomogeneousField::from_path(path), s)?;
                p.mc = Some(mc.clone());
                PathResult::monte_carlo(&path.id, p.fit.snq, mc)
            }
        };
        results.push(r);
        report.paths.push(p);
    }
    Ok(results)
}

pub fn area(g: &GlobalOpts, input: &Path, method: Method, out: Option<&Path>) -> CliResult {
    let s = settings(g)?;
    let file = load(g, input)?;
    let mut report = new_report(&file, &s);
    let results = area_results(&file, &s, method, &mut report)?;
    let area = pool_area(&results)?;
    let unicity = unicity_report(&area);
    print!("{unicity}");
    report.area = Some(area);
    report.unicity = Some(unicity);
    finish(&report, out)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Office configuration label, e.g. 312.
    #[arg(long, default_value = "312")]
    label: OfficeLabel,
    /// Target D2S, dB(A).
    #[arg(long)]
    d2s: Option<f64>,
    /// Target LpAS4m, dB(A).
    #[arg(long)]
    lpas4m: Option<f64>,
    /// Target rc, m.
    #[arg(long)]
    rc: Option<f64>,
    /// Per-position level irregularities, dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ripple: Vec<f64>,
    /// Number of positions.
    #[arg(long, default_value_t = 7)]
    positions: usize,
    /// Distance of the first position, m.
    #[arg(long, default_value_t = 2.0)]
    first: f64,
    /// Distance ratio between consecutive positions.
    #[arg(long, default_value_t = 2f64.powf(0.25))]
    ratio: f64,
    /// Level step on the source side towards the receiver, `POSITION:DB`
    /// with 0-based positions. Repeatable.
    #[arg(long = "step", value_name = "POS:DB")]
    steps: Vec<String>,
    #[arg(long, default_value = "synthetic")]
    area_id: String,
    #[arg(long, default_value = "P1")]
    path_id: String,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

fn parse_step(raw: &str) -> CliResult<LevelStep> {
    let bad = || CliError::Parse(format!("--step expects POSITION:DB, got '{raw}'"));
    let (pos, db) = raw.split_once(':').ok_or_else(bad)?;
    Ok(LevelStep {
        position: pos.trim().parse().map_err(|_| bad())?,
        plane: GridPlane::Source,
        half_plane: HalfPlane::PositiveX,
        magnitude_db: db.trim().parse().map_err(|_| bad())?,
    })
}

pub fn synth(g: &GlobalOpts, a: &SynthArgs) -> CliResult {
    let s = settings(g)?;
    let steps = a.steps.iter().map(|t| parse_step(t)).collect::<CliResult<Vec<_>>>()?;
    let spec = OfficeConfigSpec {
        target_d2s_dba: a.d2s,
        target_lpas4m_dba: a.lpas4m,
        target_rc_m: a.rc,
        threshold_dba: s.snq.threshold_dba,
        ripple_db: a.ripple.clone(),
        ..OfficeConfigSpec::from_label(a.label)
    };
    if !(a.first > 0.0 && a.ratio > 1.0) {
        return Err(CliError::Validation("--first must be > 0 and --ratio > 1".into()));
    }
    let geometry = PathGeometry::log_spaced(a.first, a.ratio, a.positions);
    let (mut path, field) = synth_office(&spec, &geometry)?;
    path.id = a.path_id.clone();
    let grid = grid_from_loglinear(&field, &steps)?;

    let format = g.format.map(DataFormat::from).unwrap_or(DataFormat::Csv);
    let ext = match format {
        DataFormat::Csv => "csv",
        DataFormat::Json => "json",
    };
    let fit = compute_snq(&path, &s.snq)?;
    let file = MeasurementFile::new(a.area_id.clone(), vec![path]);
    write(&a.out_dir.join(format!("measurements.{ext}")), &write_measurement(&file, format))?;
    write(&a.out_dir.join("field.json"), &write_grid_json(&grid))?;
    println!("{} ({}): {}", a.path_id, a.label, fit.snq);
    Ok(())
}

pub fn report(g: &GlobalOpts, input: &Path, with_mc: bool, out_dir: &Path) -> CliResult {
    let s = settings(g)?;
    let file = load(g, input)?;
    let mut report = new_report(&file, &s);
    let results = area_results(&file, &s, Method::Analytic, &mut report)?;
    if with_mc {
        for (p, path) in report.paths.iter_mut().zip(&file.paths) {
            p.mc = Some(monte_carlo(path, &HomogeneousField::from_path(path), &s)?);
        }
    }
    for p in &report.paths {
        if let Some(b) = &p.budget {
            print_budget(&p.path_id, b);
        }
        if let Some(mc) = &p.mc {
            print_mc(&p.path_id, mc);
        }
    }
    if results.len() >= 2 {
        let area = pool_area(&results)?;
        let unicity = unicity_report(&area);
        print!("{unicity}");
        report.area = Some(area);
        report.unicity = Some(unicity);
    }
    write(&out_dir.join("report.json"), &report.to_json())?;
    write(&out_dir.join("decay.csv"), &decay_plot_csv(&report))?;
    write(&out_dir.join("intervals.csv"), &interval_plot_csv(&report))?;
    write(&out_dir.join("histograms.csv"), &histogram_plot_csv(&report))?;
    Ok(())
}
