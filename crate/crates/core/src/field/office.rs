//! Synthetic office generator.
//!
//! Configuration labels (screen height, ceiling class, screen class) map to
//! target quantities through a severity score; the resulting field is a
//! log-linear decay with a speech-shaped spectrum. Screens and absorption
//! are not modelled physically.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LogLinearField;
use crate::error::{Error, Result};
use crate::metrics::{regression_stats_for, MeasurementPath, DEFAULT_THRESHOLD_DBA};
use crate::spectrum::{OctaveSpectrum, NUM_BANDS};

/// Octave levels of normal-effort speech at 1 m in free field, dB.
pub const SPEECH_SPECTRUM_1M_DB: [f64; NUM_BANDS] = [49.9, 54.3, 58.0, 52.0, 44.8, 38.8, 33.5];

/// Decay per doubling for the best and worst label, dB(A).
const LABEL_D2S_RANGE_DBA: (f64, f64) = (7.5, 3.4);
/// Level at 4 m for the best and worst label, dB(A).
const LABEL_LPAS4M_RANGE_DBA: (f64, f64) = (40.6, 51.9);

const RC_CONSISTENCY_RTOL: f64 = 1e-6;

/// Configuration label `HCS`: screen height class 1–4 (190, 150, 130,
/// 110 cm), ceiling class 1–2, screen class 1–2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OfficeLabel {
    pub height: u8,
    pub ceiling: u8,
    pub screens: u8,
}

impl OfficeLabel {
    pub fn new(height: u8, ceiling: u8, screens: u8) -> Result<Self> {
        if !(1..=4).contains(&height) || !(1..=2).contains(&ceiling) || !(1..=2).contains(&screens) {
            return Err(Error::InvalidInput(format!("invalid office label {height}{ceiling}{screens}")));
        }
        Ok(Self { height, ceiling, screens })
    }

    pub fn all() -> impl Iterator<Item = OfficeLabel> {
        (1..=4u8).flat_map(|h| {
            (1..=2u8).flat_map(move |c| (1..=2u8).map(move |s| OfficeLabel { height: h, ceiling: c, screens: s }))
        })
    }

    /// 0 for the best configuration (`111`), 1 for the worst (`422`).
    pub fn severity(&self) -> f64 {
        0.5 * f64::from(self.height - 1) / 3.0 + 0.3 * f64::from(self.ceiling - 1) + 0.2 * f64::from(self.screens - 1)
    }

    pub fn default_d2s_dba(&self) -> f64 {
        let (best, worst) = LABEL_D2S_RANGE_DBA;
        best + (worst - best) * self.severity()
    }

    pub fn default_lpas4m_dba(&self) -> f64 {
        let (best, worst) = LABEL_LPAS4M_RANGE_DBA;
        best + (worst - best) * self.severity()
    }
}

impl fmt::Display for OfficeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.height, self.ceiling, self.screens)
    }
}

impl FromStr for OfficeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s.trim().bytes().map(|b| b.wrapping_sub(b'0')).collect();
        match digits.as_slice() {
            [h, c, sc] if [h, c, sc].iter().all(|d| **d <= 9) => Self::new(*h, *c, *sc),
            _ => Err(Error::InvalidInput(format!("office label must be three digits, got '{s}'"))),
        }
    }
}

impl TryFrom<String> for OfficeLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OfficeLabel> for String {
    fn from(l: OfficeLabel) -> Self {
        l.to_string()
    }
}

/// Target description of a synthetic office path.
///
/// Explicit targets override the label defaults. When `target_rc_m` is set
/// with both other targets it must agree with them; with one of them it
/// determines the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfficeConfigSpec {
    pub label: OfficeLabel,
    #[serde(default)]
    pub target_d2s_dba: Option<f64>,
    #[serde(default)]
    pub target_lpas4m_dba: Option<f64>,
    #[serde(default)]
    pub target_rc_m: Option<f64>,
    #[serde(default = "default_threshold")]
    pub threshold_dba: f64,
    /// Per-position level irregularities, dB. Only the part orthogonal to a
    /// straight decay line is kept, so the targets are still met exactly.
    #[serde(default)]
    pub ripple_db: Vec<f64>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_DBA
}

impl OfficeConfigSpec {
    pub fn from_label(label: OfficeLabel) -> Self {
        Self {
            label,
            target_d2s_dba: None,
            target_lpas4m_dba: None,
            target_rc_m: None,
            threshold_dba: DEFAULT_THRESHOLD_DBA,
            ripple_db: Vec::new(),
        }
    }

    pub fn with_targets(label: OfficeLabel, d2s_dba: f64, lpas4m_dba: f64) -> Self {
        Self { target_d2s_dba: Some(d2s_dba), target_lpas4m_dba: Some(lpas4m_dba), ..Self::from_label(label) }
    }

    /// Resolved `(D2S, LpAS4m)`.
    pub fn resolve_targets(&self) -> Result<(f64, f64)> {
        let thr = self.threshold_dba;
        let (d2s, lpas4m) = match (self.target_d2s_dba, self.target_lpas4m_dba, self.target_rc_m) {
            (d, l, None) => (d.unwrap_or(self.label.default_d2s_dba()), l.unwrap_or(self.label.default_lpas4m_dba())),
            (d, l, Some(rc)) => {
                if !(rc.is_finite() && rc > 0.0) {
                    return Err(Error::InfeasibleSpec(format!("target rc {rc} m is not positive")));
                }
                let g = (rc / 4.0).log2();
                match (d, l) {
                    (Some(d), Some(l)) => {
                        let implied = 4.0 * 2f64.powf((l - thr) / d);
                        if ((implied - rc) / rc).abs() > RC_CONSISTENCY_RTOL {
                            return Err(Error::InfeasibleSpec(format!(
                                "target rc {rc} m disagrees with D2S {d} and LpAS4m {l}, which give {implied:.6} m"
                            )));
                        }
                        (d, l)
                    }
                    (Some(d), None) => (d, thr + d * g),
                    (None, Some(l)) => {
                        if g == 0.0 {
                            return Err(Error::InfeasibleSpec(format!("rc = 4 m requires LpAS4m = {thr}, got {l}")));
                        }
                        ((l - thr) / g, l)
                    }
                    (None, None) => {
                        let d = self.label.default_d2s_dba();
                        (d, thr + d * g)
                    }
                }
            }
        };
        if !(d2s.is_finite() && d2s > 0.0) {
            return Err(Error::InfeasibleSpec(format!("D2S must be positive, got {d2s}")));
        }
        if !lpas4m.is_finite() {
            return Err(Error::InfeasibleSpec("LpAS4m must be finite".into()));
        }
        Ok((d2s, lpas4m))
    }
}

/// Nominal distances of the positions along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub distances_m: Vec<f64>,
}

impl PathGeometry {
    pub fn log_spaced(first_m: f64, ratio: f64, count: usize) -> Self {
        Self { distances_m: (0..count).map(|i| first_m * ratio.powi(i as i32)).collect() }
    }
}

impl Default for PathGeometry {
    /// Seven positions from 2 m, a quarter doubling apart (2 m to 5.66 m).
    fn default() -> Self {
        Self::log_spaced(2.0, 2f64.powf(0.25), 7)
    }
}

/// Removes the mean and the `log2 r` trend from `ripple`.
fn orthogonal_ripple(ripple: &[f64], distances: &[f64]) -> Result<Vec<f64>> {
    let stats = regression_stats_for(distances)?;
    let n = ripple.len() as f64;
    let mean = ripple.iter().sum::<f64>() / n;
    let slope = stats.x.iter().zip(ripple).map(|(x, e)| (x - stats.mean_x) * (e - mean)).sum::<f64>() / stats.n_var();
    Ok(stats.x.iter().zip(ripple).map(|(x, e)| e - mean - slope * (x - stats.mean_x)).collect())
}

/// Builds a nominal measurement path and the field it was sampled from.
pub fn synth_office(spec: &OfficeConfigSpec, geometry: &PathGeometry) -> Result<(MeasurementPath, LogLinearField)> {
    let (d2s, lpas4m) = spec.resolve_targets()?;
    let distances = geometry.distances_m.clone();
    if distances.len() < crate::metrics::MIN_POSITIONS {
        return Err(Error::InvalidInput(format!("geometry needs at least 3 positions, got {}", distances.len())));
    }
    let ripple = if spec.ripple_db.is_empty() {
        vec![0.0; distances.len()]
    } else if spec.ripple_db.len() == distances.len() {
        orthogonal_ripple(&spec.ripple_db, &distances)?
    } else {
        return Err(Error::InvalidInput(format!(
            "{} ripple values for {} positions",
            spec.ripple_db.len(),
            distances.len()
        )));
    };
    let shape = OctaveSpectrum::new(SPEECH_SPECTRUM_1M_DB)?;
    let shift = lpas4m - shape.a_weighted_level();
    let field =
        LogLinearField::new(SPEECH_SPECTRUM_1M_DB.map(|l| l + shift), [d2s; NUM_BANDS], distances, Some(ripple))?;
    let path = field.nominal_path(format!("office-{}", spec.label))?;
    Ok((path, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compute_snq, SnqOptions};
    use approx::assert_abs_diff_eq;

    #[test]
    fn labels_parse_and_map() {
        let l: OfficeLabel = "312".parse().unwrap();
        assert_eq!(l, OfficeLabel { height: 3, ceiling: 1, screens: 2 });
        assert!("512".parse::<OfficeLabel>().is_err());
        assert!("31".parse::<OfficeLabel>().is_err());
        assert_eq!(OfficeLabel::all().count(), 16);
        let best: OfficeLabel = "111".parse().unwrap();
        let worst: OfficeLabel = "422".parse().unwrap();
        assert_abs_diff_eq!(best.default_d2s_dba(), 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(worst.default_lpas4m_dba(), 51.9, epsilon = 1e-12);
    }

    #[test]
    fn targets_are_reproduced() {
        let spec = OfficeConfigSpec::with_targets("111".parse().unwrap(), 7.5, 40.6);
        let (path, _) = synth_office(&spec, &PathGeometry::default()).unwrap();
        let fit = compute_snq(&path, &SnqOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.snq.d2s_dba, 7.5, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.snq.lpas4m_dba, 40.6, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.snq.rc_m, 2.66, epsilon = 5e-3);
        assert!(fit.residuals_dba.iter().all(|r| r.abs() < 1e-9));

        let spec = OfficeConfigSpec::with_targets("422".parse().unwrap(), 3.4, 51.9);
        let (path, _) = synth_office(&spec, &PathGeometry::default()).unwrap();
        let fit = compute_snq(&path, &SnqOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.snq.rc_m, 4.0 * 2f64.powf(6.9 / 3.4), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.snq.rc_m, 16.3, epsilon = 0.05);
    }

    #[test]
    fn ripple_keeps_targets_and_shows_in_residuals() {
        let spec = OfficeConfigSpec {
            ripple_db: vec![0.4, -0.3, 0.8, 0.0, -0.6, 0.2, 0.5],
            ..OfficeConfigSpec::with_targets("211".parse().unwrap(), 6.0, 44.0)
        };
        let (path, field) = synth_office(&spec, &PathGeometry::default()).unwrap();
        let fit = compute_snq(&path, &SnqOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.snq.d2s_dba, 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.snq.lpas4m_dba, 44.0, epsilon = 1e-9);
        for (res, rip) in fit.residuals_dba.iter().zip(&field.ripple_db) {
            assert_abs_diff_eq!(res, rip, epsilon = 1e-9);
        }
        assert!(fit.residuals_dba.iter().any(|r| r.abs() > 0.1));
    }

    #[test]
    fn rc_targets() {
        let label = "211".parse().unwrap();
        let spec = OfficeConfigSpec { target_rc_m: Some(8.0), ..OfficeConfigSpec::with_targets(label, 6.0, 40.0) };
        assert!(matches!(spec.resolve_targets(), Err(Error::InfeasibleSpec(_))));

        let spec = OfficeConfigSpec {
            target_d2s_dba: Some(6.0),
            target_rc_m: Some(8.0),
            ..OfficeConfigSpec::from_label(label)
        };
        let (d, l) = spec.resolve_targets().unwrap();
        assert_abs_diff_eq!(d, 6.0);
        assert_abs_diff_eq!(l, 51.0, epsilon = 1e-12);

        let spec = OfficeConfigSpec {
            target_lpas4m_dba: Some(40.0),
            target_rc_m: Some(8.0),
            ..OfficeConfigSpec::from_label(label)
        };
        assert!(matches!(spec.resolve_targets(), Err(Error::InfeasibleSpec(_))));

        let spec = OfficeConfigSpec { target_d2s_dba: Some(-1.0), ..OfficeConfigSpec::from_label(label) };
        assert!(matches!(spec.resolve_targets(), Err(Error::InfeasibleSpec(_))));
    }
}
