//! Measurement paths and the log2-distance regression that yields the
//! single number quantities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::OctaveSpectrum;

/// Default comfort threshold, dB(A).
pub const DEFAULT_THRESHOLD_DBA: f64 = 45.0;

/// Smallest number of positions accepted on a path.
pub const MIN_POSITIONS: usize = 3;

/// Below this count a path is accepted with a warning.
pub const RECOMMENDED_POSITIONS: usize = 4;

/// `ln 2`, the factor between natural and base-2 logarithms.
pub const LN_2: f64 = std::f64::consts::LN_2;

/// `log2(4)`: abscissa of the 4 m reference distance.
const LOG2_REFERENCE: f64 = 2.0;

/// Relative floor on the abscissa variance, scaled by the squared abscissae.
const DEGENERATE_VAR_RTOL: f64 = 1e-20;

pub fn log2_distance(r: f64) -> f64 {
    r.ln() / LN_2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPosition {
    #[serde(default)]
    pub id: String,
    pub distance_m: f64,
    pub spectrum: OctaveSpectrum,
}

impl MeasurementPosition {
    pub fn new(id: impl Into<String>, distance_m: f64, spectrum: OctaveSpectrum) -> Self {
        Self { id: id.into(), distance_m, spectrum }
    }

    pub fn a_weighted_level(&self) -> f64 {
        self.spectrum.a_weighted_level()
    }
}

/// Ordered positions along a line starting at the source.
///
/// Construction does not enforce the path invariants; see
/// [`validate_path`] and the errors returned by the computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPath {
    pub id: String,
    pub positions: Vec<MeasurementPosition>,
}

impl MeasurementPath {
    pub fn new(id: impl Into<String>, positions: Vec<MeasurementPosition>) -> Self {
        Self { id: id.into(), positions }
    }

    /// Path whose spectra carry only the 1 kHz band, so the A-weighted
    /// levels equal `levels_dba` exactly.
    pub fn from_a_weighted(id: impl Into<String>, distances: &[f64], levels_dba: &[f64]) -> Result<Self> {
        if distances.len() != levels_dba.len() {
            return Err(Error::InvalidInput(format!("{} distances but {} levels", distances.len(), levels_dba.len())));
        }
        let positions = distances
            .iter()
            .zip(levels_dba)
            .enumerate()
            .map(|(i, (&r, &l))| {
                Ok(MeasurementPosition::new((i + 1).to_string(), r, OctaveSpectrum::single_band(3, l)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(id, positions))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.distance_m).collect()
    }

    pub fn decay_data(&self) -> Result<DecayData> {
        DecayData::from_path(self)
    }
}

/// A-weighted level profile of a path: the regression input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayData {
    pub distances_m: Vec<f64>,
    pub levels_dba: Vec<f64>,
}

impl DecayData {
    pub fn new(distances_m: Vec<f64>, levels_dba: Vec<f64>) -> Result<Self> {
        let data = Self { distances_m, levels_dba };
        data.check()?;
        Ok(data)
    }

    pub fn from_path(path: &MeasurementPath) -> Result<Self> {
        Self::new(
            path.positions.iter().map(|p| p.distance_m).collect(),
            path.positions.iter().map(MeasurementPosition::a_weighted_level).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.distances_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances_m.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.distances_m.len() != self.levels_dba.len() {
            return Err(Error::InvalidInput(format!(
                "{} distances but {} levels",
                self.distances_m.len(),
                self.levels_dba.len()
            )));
        }
        if self.len() < MIN_POSITIONS {
            return Err(Error::InvalidPath(format!("{} positions, at least {MIN_POSITIONS} required", self.len())));
        }
        if let Some(r) = self.distances_m.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidPath(format!("non-positive distance {r}")));
        }
        if let Some(l) = self.levels_dba.iter().find(|l| !l.is_finite()) {
            return Err(Error::InvalidPath(format!("non-finite level {l}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnqOptions {
    pub threshold_dba: f64,
    /// `|D2S|` below this is treated as zero decay.
    pub zero_decay_eps: f64,
}

impl Default for SnqOptions {
    fn default() -> Self {
        Self { threshold_dba: DEFAULT_THRESHOLD_DBA, zero_decay_eps: 1e-6 }
    }
}

impl SnqOptions {
    pub fn with_threshold(threshold_dba: f64) -> Self {
        Self { threshold_dba, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnqSet {
    pub d2s_dba: f64,
    pub lpas4m_dba: f64,
    pub rc_m: f64,
    pub threshold_dba: f64,
}

impl SnqSet {
    /// `rc = 4·2^((LpAS4m − threshold)/D2S)`.
    pub fn comfort_distance(d2s_dba: f64, lpas4m_dba: f64, threshold_dba: f64) -> f64 {
        4.0 * 2f64.powf((lpas4m_dba - threshold_dba) / d2s_dba)
    }

    /// `log2(rc/4)`, computed without the round trip through `rc`.
    pub fn log2_rc_over_4(&self) -> f64 {
        (self.lpas4m_dba - self.threshold_dba) / self.d2s_dba
    }
}

impl fmt::Display for SnqSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D2S = {:.2} dB(A), LpAS4m = {:.2} dB(A), rc = {:.2} m", self.d2s_dba, self.lpas4m_dba, self.rc_m)
    }
}

/// Regression outcome with its residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub snq: SnqSet,
    /// `L_i − fitted(r_i)`, one per position.
    pub residuals_dba: Vec<f64>,
}

impl DecayFit {
    pub fn fitted_level(&self, r: f64) -> f64 {
        self.snq.lpas4m_dba - self.snq.d2s_dba * (log2_distance(r) - LOG2_REFERENCE)
    }
}

/// Population moments of the abscissa used by the closed-form expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    /// `log2(r_i)`.
    pub x: Vec<f64>,
    pub mean_x: f64,
    /// Population variance of `x` (divide by N).
    pub var_x: f64,
    /// Mean of `log2(r_i/4)`.
    pub mean_log2_r_over_4: f64,
    /// Mean of `log2(r_i/4)²`.
    pub mean_sq_log2_r_over_4: f64,
    /// Mean of `1/r_i²`.
    pub mean_inv_r2: f64,
}

impl RegressionStats {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// `N·Var(log2 r)`, the regression denominator.
    pub fn n_var(&self) -> f64 {
        self.n() as f64 * self.var_x
    }
}

pub fn regression_stats_for(distances_m: &[f64]) -> Result<RegressionStats> {
    let n = distances_m.len();
    if n == 0 {
        return Err(Error::DegenerateGeometry);
    }
    let nf = n as f64;
    let x: Vec<f64> = distances_m.iter().map(|&r| log2_distance(r)).collect();
    let mean_x = x.iter().sum::<f64>() / nf;
    let var_x = x.iter().map(|xi| (xi - mean_x).powi(2)).sum::<f64>() / nf;
    let scale = x.iter().map(|xi| xi * xi).sum::<f64>() / nf;
    if !(var_x > DEGENERATE_VAR_RTOL * scale.max(1.0)) {
        return Err(Error::DegenerateGeometry);
    }
    let mean_log2_r_over_4 = x.iter().map(|xi| xi - LOG2_REFERENCE).sum::<f64>() / nf;
    let mean_sq_log2_r_over_4 = x.iter().map(|xi| (xi - LOG2_REFERENCE).powi(2)).sum::<f64>() / nf;
    let mean_inv_r2 = distances_m.iter().map(|r| 1.0 / (r * r)).sum::<f64>() / nf;
    Ok(RegressionStats { x, mean_x, var_x, mean_log2_r_over_4, mean_sq_log2_r_over_4, mean_inv_r2 })
}

pub fn regression_stats(path: &MeasurementPath) -> Result<RegressionStats> {
    if let Some(r) = path.positions.iter().map(|p| p.distance_m).find(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidPath(format!("non-positive distance {r}")));
    }
    regression_stats_for(&path.distances())
}

/// Least-squares fit of level against `log2(r)`.
pub fn fit_decay(data: &DecayData, opts: &SnqOptions) -> Result<DecayFit> {
    data.check()?;
    let stats = regression_stats_for(&data.distances_m)?;
    let nf = data.len() as f64;
    let mean_l = data.levels_dba.iter().sum::<f64>() / nf;
    let sxy: f64 = stats.x.iter().zip(&data.levels_dba).map(|(x, l)| (x - stats.mean_x) * (l - mean_l)).sum();
    let d2s = -sxy / stats.n_var();
    let lpas4m = mean_l + d2s * stats.mean_log2_r_over_4;
    if !(d2s.abs() >= opts.zero_decay_eps) {
        return Err(Error::ZeroDecay { d2s });
    }
    let rc = SnqSet::comfort_distance(d2s, lpas4m, opts.threshold_dba);
    let residuals =
        stats.x.iter().zip(&data.levels_dba).map(|(x, l)| l - (lpas4m - d2s * (x - LOG2_REFERENCE))).collect();
    Ok(DecayFit {
        snq: SnqSet { d2s_dba: d2s, lpas4m_dba: lpas4m, rc_m: rc, threshold_dba: opts.threshold_dba },
        residuals_dba: residuals,
    })
}

/// Computes the quantities of a path from the A-weighted aggregates of its
/// spectra.
pub fn compute_snq(path: &MeasurementPath, opts: &SnqOptions) -> Result<DecayFit> {
    fit_decay(&DecayData::from_path(path)?, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    InsufficientPositions,
    FewPositions,
    NonPositiveDistance,
    ZeroAbscissaVariance,
    NonMonotoneDistances,
    IncompleteSpectrum,
    DuplicatePositionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub message: String,
}

impl Diagnostic {
    fn error(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, code, message: message.into() }
    }

    fn warning(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, code, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

/// Checks the path invariants. Warnings never block computation.
pub fn validate_path(path: &MeasurementPath) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = path.len();
    if n < MIN_POSITIONS {
        out.push(Diagnostic::error(
            DiagnosticCode::InsufficientPositions,
            format!("insufficient positions on path '{}': {n} < {MIN_POSITIONS}", path.id),
        ));
    } else if n < RECOMMENDED_POSITIONS {
        out.push(Diagnostic::warning(
            DiagnosticCode::FewPositions,
            format!("path '{}' has only {n} positions", path.id),
        ));
    }

    let mut distances_ok = true;
    for p in &path.positions {
        if !(p.distance_m.is_finite() && p.distance_m > 0.0) {
            distances_ok = false;
            out.push(Diagnostic::error(
                DiagnosticCode::NonPositiveDistance,
                format!("non-positive distance {} m at position '{}'", p.distance_m, p.id),
            ));
        }
    }
    let incomplete: Vec<&str> =
        path.positions.iter().filter(|p| !p.spectrum.is_complete()).map(|p| p.id.as_str()).collect();
    if !incomplete.is_empty() {
        out.push(Diagnostic::warning(
            DiagnosticCode::IncompleteSpectrum,
            format!("path '{}': absent octave bands at positions {}", path.id, incomplete.join(", ")),
        ));
    }

    if distances_ok && !path.is_empty() && matches!(regression_stats(path), Err(Error::DegenerateGeometry)) {
        out.push(Diagnostic::error(
            DiagnosticCode::ZeroAbscissaVariance,
            format!("zero abscissa variance on path '{}': all distances equal", path.id),
        ));
    }

    if distances_ok && path.positions.windows(2).any(|w| w[1].distance_m <= w[0].distance_m) {
        out.push(Diagnostic::warning(
            DiagnosticCode::NonMonotoneDistances,
            format!("distances on path '{}' are not strictly increasing", path.id),
        ));
    }

    let mut ids: Vec<&str> = path.positions.iter().map(|p| p.id.as_str()).filter(|s| !s.is_empty()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        out.push(Diagnostic::error(
            DiagnosticCode::DuplicatePositionId,
            format!("duplicate position id '{}' on path '{}'", w[0], path.id),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn example_path() -> MeasurementPath {
        MeasurementPath::from_a_weighted("P1", &[2.0, 4.0, 8.0, 16.0], &[57.0, 52.0, 47.0, 42.0]).unwrap()
    }

    #[test]
    fn exact_log_linear_decay() {
        let fit = compute_snq(&example_path(), &SnqOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.snq.d2s_dba, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.snq.lpas4m_dba, 52.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.snq.rc_m, 4.0 * 2f64.powf(7.0 / 5.0), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.snq.rc_m, 10.556, epsilon = 5e-4);
        assert!(fit.residuals_dba.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn level_shift_moves_only_the_intercept() {
        let path = MeasurementPath::from_a_weighted("P", &[2.0, 3.0, 5.5, 9.0, 12.0], &[58.1, 55.0, 50.2, 46.7, 45.9])
            .unwrap();
        let a = compute_snq(&path, &SnqOptions::default()).unwrap().snq;
        let shifted = MeasurementPath {
            positions: path
                .positions
                .iter()
                .map(|p| MeasurementPosition { spectrum: p.spectrum.shifted(3.0), ..p.clone() })
                .collect(),
            ..path
        };
        let b = compute_snq(&shifted, &SnqOptions::default()).unwrap().snq;
        assert_abs_diff_eq!(a.d2s_dba, b.d2s_dba, epsilon = 1e-12);
        assert_abs_diff_eq!(b.lpas4m_dba - a.lpas4m_dba, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn threshold_at_intercept_gives_four_metres() {
        let path = MeasurementPath::from_a_weighted("P", &[2.0, 4.0, 8.0], &[51.0, 45.0, 39.0]).unwrap();
        let fit = compute_snq(&path, &SnqOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.snq.lpas4m_dba, 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.snq.rc_m, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn regression_stats_examples() {
        let s = regression_stats_for(&[2.0, 4.0, 8.0, 16.0]).unwrap();
        assert_eq!(s.x, vec![1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(s.mean_x, 2.5);
        assert_abs_diff_eq!(s.var_x, 1.25);
        assert_abs_diff_eq!(s.mean_log2_r_over_4, s.mean_x - 2.0);

        let s = regression_stats_for(&[4.0, 4.0, 4.0, 8.0]).unwrap();
        assert_abs_diff_eq!(s.mean_log2_r_over_4, 0.25);

        // Two positions are enough for the moments themselves.
        let s = regression_stats_for(&[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(s.mean_inv_r2, 0.15625);
    }

    #[test]
    fn degenerate_and_zero_decay_errors() {
        let flat_geometry = MeasurementPath::from_a_weighted("P", &[4.0; 4], &[50.0, 49.0, 48.0, 47.0]).unwrap();
        assert_eq!(compute_snq(&flat_geometry, &SnqOptions::default()), Err(Error::DegenerateGeometry));

        let flat_levels = MeasurementPath::from_a_weighted("P", &[2.0, 4.0, 8.0], &[50.0; 3]).unwrap();
        assert!(matches!(compute_snq(&flat_levels, &SnqOptions::default()), Err(Error::ZeroDecay { .. })));

        let short = MeasurementPath::from_a_weighted("P", &[2.0, 4.0], &[50.0, 45.0]).unwrap();
        assert!(matches!(compute_snq(&short, &SnqOptions::default()), Err(Error::InvalidPath(_))));
    }

    #[test]
    fn validate_path_diagnostics() {
        let seven: Vec<f64> = (0..7).map(|i| 2.0 * 1.4f64.powi(i)).collect();
        let path = MeasurementPath::from_a_weighted("P", &seven, &[60.0; 7]).unwrap();
        // Single-band spectra only raise the incomplete-spectrum warning.
        assert!(validate_path(&path).iter().all(|d| d.code == DiagnosticCode::IncompleteSpectrum && !d.is_error()));

        let two = MeasurementPath::from_a_weighted("P", &[2.0, 4.0], &[60.0; 2]).unwrap();
        let d = validate_path(&two);
        assert!(d.iter().any(|d| d.is_error() && d.message.contains("insufficient positions")));

        let same = MeasurementPath::from_a_weighted("P", &[4.0; 4], &[60.0; 4]).unwrap();
        let d = validate_path(&same);
        assert!(d.iter().any(|d| d.is_error() && d.message.contains("zero abscissa variance")));

        let three = MeasurementPath::from_a_weighted("P", &[2.0, 8.0, 4.0], &[60.0; 3]).unwrap();
        let d = validate_path(&three);
        assert!(d.iter().all(|d| !d.is_error()));
        assert!(d.iter().any(|d| d.code == DiagnosticCode::FewPositions));
        assert!(d.iter().any(|d| d.code == DiagnosticCode::NonMonotoneDistances));

        let zero = MeasurementPath::from_a_weighted("P", &[0.0, 4.0, 8.0, 16.0], &[60.0; 4]).unwrap();
        assert!(validate_path(&zero).iter().any(|d| d.code == DiagnosticCode::NonPositiveDistance));
    }

    fn distinct_distances() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1.0f64..32.0, 3..12).prop_filter("distinct abscissae", |r| {
            let s = regression_stats_for(r);
            matches!(s, Ok(s) if s.var_x > 1e-3)
        })
    }

    proptest! {
        #[test]
        fn recovers_generating_line(r in distinct_distances(), d in 1.0f64..10.0, a in 35.0f64..60.0) {
            let levels: Vec<f64> = r.iter().map(|&ri| a - d * (log2_distance(ri) - 2.0)).collect();
            let fit = fit_decay(&DecayData::new(r, levels).unwrap(), &SnqOptions::default()).unwrap();
            prop_assert!((fit.snq.d2s_dba - d).abs() <= 1e-9 * d);
            prop_assert!((fit.snq.lpas4m_dba - a).abs() <= 1e-9 * a);
        }

        #[test]
        fn distance_scaling_keeps_decay(r in distinct_distances(), factor in 0.5f64..3.0,
                                        levels_seed in prop::collection::vec(40.0f64..60.0, 12)) {
            let levels: Vec<f64> = levels_seed[..r.len()].iter().zip(&r).map(|(l, ri)| l - 6.0 * ri.log2()).collect();
            let opts = SnqOptions { zero_decay_eps: 0.0, ..SnqOptions::default() };
            let a = fit_decay(&DecayData::new(r.clone(), levels.clone()).unwrap(), &opts).unwrap().snq;
            let scaled: Vec<f64> = r.iter().map(|ri| ri * factor).collect();
            let b = fit_decay(&DecayData::new(scaled, levels).unwrap(), &opts).unwrap().snq;
            prop_assert!((a.d2s_dba - b.d2s_dba).abs() < 1e-9 * a.d2s_dba.abs().max(1.0));
            let expected = a.lpas4m_dba + a.d2s_dba * factor.log2();
            prop_assert!((b.lpas4m_dba - expected).abs() < 1e-9 * expected.abs());
        }

        #[test]
        fn comfort_distance_round_trip(r in distinct_distances(), d in 2.0f64..9.0, a in 38.0f64..55.0) {
            let levels: Vec<f64> = r.iter().map(|&ri| a - d * (log2_distance(ri) - 2.0) + 0.1 * ri.sin()).collect();
            let fit = fit_decay(&DecayData::new(r, levels).unwrap(), &SnqOptions::default()).unwrap();
            let rc = SnqSet::comfort_distance(fit.snq.d2s_dba, fit.snq.lpas4m_dba, 45.0);
            prop_assert!(fit.snq.rc_m > 0.0);
            assert_relative_eq!(rc, fit.snq.rc_m, max_relative = 1e-12);
        }
    }
}
