//! Monte-Carlo evaluation of the uncertainties by emulating complete
//! measurements.
//!
//! One emulated measurement:
//!
//! 1. each device is displaced by a planar normal positioning error and the
//!    octave levels are read from the field at the displaced positions (or
//!    kept nominal when coupling is off); the true displaced distances are
//!    computed;
//! 2. a uniform error of standard deviation `u_oct` is added to every
//!    octave level and a normal error of standard deviation `u_tape` to
//!    every distance;
//! 3. the quantities are computed from the perturbed data.
//!
//! Run `i` draws from its own ChaCha stream `(seed, i)`, so results do not
//! depend on how runs are scheduled across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{DistanceErrorModel, OctaveUncertaintyTable};
use crate::error::{Error, Result};
use crate::field::{offset_distance, FieldProvider, Offset};
use crate::metrics::{fit_decay, DecayData, MeasurementPath, SnqOptions, SnqSet};
use crate::spectrum::{energetic_sum, A_WEIGHTING_DB, NUM_BANDS};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Samples below this count are rejected by [`check_normality`].
pub const MIN_NORMALITY_SAMPLES: usize = 1000;
pub const MAX_ABS_SKEWNESS: f64 = 0.5;
pub const MAX_ABS_EXCESS_KURTOSIS: f64 = 1.0;
const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McErrorModel {
    pub octave_table: OctaveUncertaintyTable,
    pub dist_model: DistanceErrorModel,
    /// Per-axis standard deviation of each device's positioning error, m.
    pub positioning_sigma_m: f64,
    /// Read levels at the displaced positions (`true`) or keep the nominal
    /// levels and let only the distances move (`false`).
    pub couple_levels_to_position: bool,
    /// Place the source once per measurement instead of once per position.
    pub shared_source_offset: bool,
}

impl Default for McErrorModel {
    fn default() -> Self {
        Self::from_models(OctaveUncertaintyTable::default(), DistanceErrorModel::default())
    }
}

impl McErrorModel {
    pub fn from_models(octave_table: OctaveUncertaintyTable, dist_model: DistanceErrorModel) -> Self {
        Self {
            octave_table,
            dist_model,
            positioning_sigma_m: dist_model.sigma_axis_m(),
            couple_levels_to_position: false,
            shared_source_offset: false,
        }
    }

    /// Every error magnitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            octave_table: self.octave_table.scaled(factor),
            dist_model: DistanceErrorModel { u_tape_m: self.dist_model.u_tape_m * factor, ..self.dist_model },
            positioning_sigma_m: self.positioning_sigma_m * factor,
            ..*self
        }
    }

    /// No error at all: emulation reproduces the nominal path.
    pub fn zero() -> Self {
        Self::default().scaled(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.positioning_sigma_m.is_finite() && self.positioning_sigma_m >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "positioning sigma must be >= 0, got {}",
                self.positioning_sigma_m
            )));
        }
        if !(self.dist_model.u_tape_m.is_finite() && self.dist_model.u_tape_m >= 0.0) {
            return Err(Error::InvalidInput(format!("u_tape_m must be >= 0, got {}", self.dist_model.u_tape_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub batch_size: usize,
    pub min_batches: usize,
    pub max_batches: usize,
    pub convergence_tol_level_db: f64,
    pub convergence_tol_rc_m: f64,
    pub seed: u64,
    pub coverage_k: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            batch_size: 10_000,
            min_batches: 2,
            max_batches: 50,
            convergence_tol_level_db: 0.01,
            convergence_tol_rc_m: 0.01,
            seed: 0,
            coverage_k: 2.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1000 {
            return Err(Error::InvalidInput(format!("batch_size must be >= 1000, got {}", self.batch_size)));
        }
        if self.max_batches == 0 || self.min_batches > self.max_batches {
            return Err(Error::InvalidInput(format!(
                "need 1 <= max_batches and min_batches <= max_batches, got {}/{}",
                self.min_batches, self.max_batches
            )));
        }
        if !(self.convergence_tol_level_db > 0.0 && self.convergence_tol_rc_m > 0.0) {
            return Err(Error::InvalidInput("convergence tolerances must be > 0".into()));
        }
        if !(self.coverage_k.is_finite() && self.coverage_k > 0.0) {
            return Err(Error::InvalidInput(format!("coverage factor must be > 0, got {}", self.coverage_k)));
        }
        Ok(())
    }
}

/// Random stream of run `run` for a given seed.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_offset<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Offset {
    let dx = standard_normal(rng);
    let dy = standard_normal(rng);
    Offset::new(sigma * dx, sigma * dy)
}

/// Independent planar normal offsets, one per device.
pub fn sample_position_offsets<R: Rng + ?Sized>(rng: &mut R, sigma_m: f64, n_devices: usize) -> Vec<Offset> {
    (0..n_devices).map(|_| normal_offset(rng, sigma_m)).collect()
}

/// One synthetic measurement of `path`.
///
/// Random numbers are drawn in a fixed order whatever the error magnitudes,
/// so scaling the model by `s` scales every error of a given run by `s`.
pub fn emulate_measurement<R: Rng + ?Sized>(
    field: &dyn FieldProvider,
    path: &MeasurementPath,
    model: &McErrorModel,
    opts: &SnqOptions,
    rng: &mut R,
) -> Result<SnqSet> {
    let n = path.len();
    if model.couple_levels_to_position && field.num_positions() < n {
        return Err(Error::FieldDomain(format!(
            "field has {} positions, path '{}' has {n}",
            field.num_positions(),
            path.id
        )));
    }
    let sigma = model.positioning_sigma_m;
    let shared_source = model.shared_source_offset.then(|| normal_offset(rng, sigma));
    let u_oct = model.octave_table.values();

    let mut distances = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    for (i, pos) in path.positions.iter().enumerate() {
        let source = match shared_source {
            Some(s) => s,
            None => normal_offset(rng, sigma),
        };
        let receiver = normal_offset(rng, sigma);
        let true_distance = offset_distance(pos.distance_m, source, receiver);

        let nominal = pos.spectrum.levels();
        let read = if model.couple_levels_to_position { field.spectrum_at(i, source, receiver)? } else { *nominal };

        let mut weighted = [f64::NEG_INFINITY; NUM_BANDS];
        for band in 0..NUM_BANDS {
            let e = 2.0 * rng.random::<f64>() - 1.0;
            if let (Some(_), Some(level)) = (nominal[band], read[band]) {
                weighted[band] = level + e * SQRT_3 * u_oct[band] + A_WEIGHTING_DB[band];
            }
        }
        levels.push(energetic_sum(weighted.iter().copied().filter(|l| l.is_finite())));
        distances.push(true_distance + model.dist_model.u_tape_m * standard_normal(rng));
    }
    Ok(fit_decay(&DecayData { distances_m: distances, levels_dba: levels }, opts)?.snq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], bins: usize) -> Self {
        let lower = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if samples.is_empty() || !(upper > lower) {
            return Self { lower, upper, counts: vec![samples.len() as u64] };
        }
        let width = (upper - lower) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &s in samples {
            let b = (((s - lower) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { lower, upper, counts }
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.counts.len() as f64
    }

    /// `(lower edge, upper edge, count)` per bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        let w = self.bin_width();
        self.counts
            .iter()
            .enumerate()
            .map(move |(i, &c)| (self.lower + i as f64 * w, self.lower + (i + 1) as f64 * w, c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub is_normal: bool,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    /// Set when the samples have no spread.
    pub degenerate: bool,
}

/// Moment-based normality check: `|skewness| < 0.5` and
/// `|excess kurtosis| < 1`.
pub fn check_normality(samples: &[f64]) -> Result<NormalityCheck> {
    if samples.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientSamples { got: samples.len(), need: MIN_NORMALITY_SAMPLES });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for s in samples {
        let d = s - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > f64::EPSILON * f64::EPSILON * mean * mean) || m2 == 0.0 {
        return Ok(NormalityCheck { is_normal: false, skewness: None, excess_kurtosis: None, degenerate: true });
    }
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    Ok(NormalityCheck {
        is_normal: skewness.abs() < MAX_ABS_SKEWNESS && excess_kurtosis.abs() < MAX_ABS_EXCESS_KURTOSIS,
        skewness: Some(skewness),
        excess_kurtosis: Some(excess_kurtosis),
        degenerate: false,
    })
}

fn mean_and_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnqSampleStats {
    pub mean: f64,
    /// Sample standard deviation: the Monte-Carlo standard uncertainty.
    pub std_dev: f64,
    pub histogram: Histogram,
    pub normality: Option<NormalityCheck>,
}

impl SnqSampleStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let (mean, std_dev) = mean_and_std(samples);
        Self {
            mean,
            std_dev,
            histogram: Histogram::from_samples(samples, HISTOGRAM_BINS),
            normality: check_normality(samples).ok(),
        }
    }
}

/// Raw emulated values, in run order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McSamples {
    pub d2s_dba: Vec<f64>,
    pub lpas4m_dba: Vec<f64>,
    pub rc_m: Vec<f64>,
}

impl McSamples {
    fn push(&mut self, s: &SnqSet) {
        self.d2s_dba.push(s.d2s_dba);
        self.lpas4m_dba.push(s.lpas4m_dba);
        self.rc_m.push(s.rc_m);
    }

    pub fn len(&self) -> usize {
        self.d2s_dba.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d2s_dba.is_empty()
    }

    fn std_devs(&self) -> [f64; 3] {
        [mean_and_std(&self.d2s_dba).1, mean_and_std(&self.lpas4m_dba).1, mean_and_std(&self.rc_m).1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub d2s: SnqSampleStats,
    pub lpas4m: SnqSampleStats,
    pub rc: SnqSampleStats,
    pub runs_used: usize,
    pub batches: usize,
    pub converged: bool,
    pub coverage_k: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<McSamples>,
}

impl McResult {
    /// Same result without the raw samples.
    pub fn without_samples(&self) -> Self {
        Self { samples: None, ..self.clone() }
    }
}

/// Runs batches of emulated measurements until the cumulative standard
/// deviations of all three quantities move by less than the tolerances
/// between consecutive batches, or `max_batches` is reached. A result that
/// did not converge is still returned, with `converged == false`.
pub fn run_mc(
    field: &dyn FieldProvider,
    path: &MeasurementPath,
    model: &McErrorModel,
    config: &McConfig,
    opts: &SnqOptions,
) -> Result<McResult> {
    model.validate()?;
    config.validate()?;
    let mut samples = McSamples::default();
    let mut previous: Option<[f64; 3]> = None;
    let mut converged = false;
    let mut batches = 0;

    for batch in 0..config.max_batches {
        let start = (batch * config.batch_size) as u64;
        let runs: Vec<SnqSet> = (start..start + config.batch_size as u64)
            .into_par_iter()
            .map(|run| emulate_measurement(field, path, model, opts, &mut run_rng(config.seed, run)))
            .collect::<Result<_>>()?;
        for r in &runs {
            samples.push(r);
        }
        batches = batch + 1;

        let current = samples.std_devs();
        if let Some(prev) = previous {
            let tol = [config.convergence_tol_level_db, config.convergence_tol_level_db, config.convergence_tol_rc_m];
            let settled = (0..3).all(|k| (current[k] - prev[k]).abs() < tol[k]);
            log::debug!("batch {batches}: std devs {current:?}, settled = {settled}");
            if settled && batches >= config.min_batches {
                converged = true;
                break;
            }
        }
        previous = Some(current);
    }
    if !converged {
        log::warn!("Monte-Carlo run on path '{}' did not converge in {batches} batches", path.id);
    }

    Ok(McResult {
        d2s: SnqSampleStats::from_samples(&samples.d2s_dba),
        lpas4m: SnqSampleStats::from_samples(&samples.lpas4m_dba),
        rc: SnqSampleStats::from_samples(&samples.rc_m),
        runs_used: samples.len(),
        batches,
        converged,
        coverage_k: config.coverage_k,
        seed: config.seed,
        samples: Some(samples),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{synth_office, HomogeneousField, OfficeConfigSpec, PathGeometry};
    use crate::metrics::compute_snq;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Exp, Normal};

    fn office_path() -> MeasurementPath {
        let spec = OfficeConfigSpec::with_targets("211".parse().unwrap(), 6.0, 46.0);
        synth_office(&spec, &PathGeometry::default()).unwrap().0
    }

    #[test]
    fn zero_errors_reproduce_the_nominal_path() {
        let path = office_path();
        let field = HomogeneousField::from_path(&path);
        let nominal = compute_snq(&path, &SnqOptions::default()).unwrap().snq;
        for couple in [false, true] {
            let model = McErrorModel { couple_levels_to_position: couple, ..McErrorModel::zero() };
            let got = emulate_measurement(&field, &path, &model, &SnqOptions::default(), &mut run_rng(7, 3)).unwrap();
            assert_eq!(got, nominal);
        }
    }

    #[test]
    fn same_stream_same_measurement() {
        let path = office_path();
        let field = HomogeneousField::from_path(&path);
        let model = McErrorModel::default();
        let a = emulate_measurement(&field, &path, &model, &SnqOptions::default(), &mut run_rng(42, 11)).unwrap();
        let b = emulate_measurement(&field, &path, &model, &SnqOptions::default(), &mut run_rng(42, 11)).unwrap();
        let c = emulate_measurement(&field, &path, &model, &SnqOptions::default(), &mut run_rng(42, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normality_calibration() {
        let mut rng = run_rng(1, 0);
        let normal: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(10_000).collect();
        assert!(check_normality(&normal).unwrap().is_normal);

        let exp: Vec<f64> = Exp::new(1.0).unwrap().sample_iter(&mut rng).take(10_000).collect();
        let c = check_normality(&exp).unwrap();
        assert!(!c.is_normal);
        assert_abs_diff_eq!(c.skewness.unwrap(), 2.0, epsilon = 0.3);

        let constant = vec![3.25; 2000];
        let c = check_normality(&constant).unwrap();
        assert!(!c.is_normal && c.degenerate);

        assert_eq!(check_normality(&normal[..999]), Err(Error::InsufficientSamples { got: 999, need: 1000 }));
    }

    #[test]
    fn histogram_counts_every_sample() {
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let h = Histogram::from_samples(&samples, 10);
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert_eq!(h.bins().count(), 10);
        let flat = Histogram::from_samples(&[1.0; 5], 10);
        assert_eq!(flat.counts, vec![5]);
    }

    #[test]
    fn config_validation() {
        assert!(McConfig { batch_size: 999, ..McConfig::default() }.validate().is_err());
        assert!(McConfig { convergence_tol_rc_m: 0.0, ..McConfig::default() }.validate().is_err());
        assert!(McConfig { min_batches: 3, max_batches: 2, ..McConfig::default() }.validate().is_err());
        assert!(McConfig::default().validate().is_ok());
    }

    #[test]
    fn not_converged_is_flagged_not_an_error() {
        let path = office_path();
        let field = HomogeneousField::from_path(&path);
        let config = McConfig { batch_size: 1000, max_batches: 1, min_batches: 1, ..McConfig::default() };
        let r = run_mc(&field, &path, &McErrorModel::default(), &config, &SnqOptions::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.runs_used, 1000);
    }

    #[test]
    fn homogeneous_case_converges_near_ten_thousand_runs() {
        let path = office_path();
        let field = HomogeneousField::from_path(&path);
        let r = run_mc(&field, &path, &McErrorModel::default(), &McConfig::default(), &SnqOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.runs_used <= 40_000, "runs used {}", r.runs_used);
        assert!(r.d2s.normality.unwrap().is_normal);
    }
}
