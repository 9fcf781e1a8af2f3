//! Octave-band spectra and their A-weighted aggregate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_BANDS: usize = 7;

/// Octave-band centre frequencies, 125 Hz to 8 kHz.
pub const OCTAVE_CENTRES_HZ: [f64; NUM_BANDS] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];

/// A-weighting corrections at the octave centre frequencies (IEC 61672-1), dB.
pub const A_WEIGHTING_DB: [f64; NUM_BANDS] = [-16.1, -8.6, -3.2, 0.0, 1.2, 1.0, -1.1];

/// Seven octave-band sound pressure levels in dB, ascending centre frequency.
///
/// A band may be absent (`None`); absent bands are excluded from energetic
/// sums. At least one band must be present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Option<f64>; NUM_BANDS]", into = "[Option<f64>; NUM_BANDS]")]
pub struct OctaveSpectrum {
    levels: [Option<f64>; NUM_BANDS],
}

impl OctaveSpectrum {
    /// All seven bands present.
    pub fn new(levels: [f64; NUM_BANDS]) -> Result<Self> {
        Self::with_absent(levels.map(Some))
    }

    pub fn with_absent(levels: [Option<f64>; NUM_BANDS]) -> Result<Self> {
        if levels.iter().all(Option::is_none) {
            return Err(Error::InvalidSpectrum("no octave band present".into()));
        }
        if let Some(band) = levels.iter().position(|l| matches!(l, Some(v) if !v.is_finite())) {
            return Err(Error::InvalidSpectrum(format!("non-finite level in the {} Hz band", OCTAVE_CENTRES_HZ[band])));
        }
        Ok(Self { levels })
    }

    /// A spectrum holding a single band, the others absent.
    pub fn single_band(band: usize, level: f64) -> Result<Self> {
        if band >= NUM_BANDS {
            return Err(Error::InvalidSpectrum(format!("band index {band} out of range")));
        }
        let mut levels = [None; NUM_BANDS];
        levels[band] = Some(level);
        Self::with_absent(levels)
    }

    pub fn levels(&self) -> &[Option<f64>; NUM_BANDS] {
        &self.levels
    }

    pub fn level(&self, band: usize) -> Option<f64> {
        self.levels[band]
    }

    pub fn is_complete(&self) -> bool {
        self.levels.iter().all(Option::is_some)
    }

    /// Adds `delta` dB to every present band.
    pub fn shifted(&self, delta: f64) -> Self {
        Self { levels: self.levels.map(|l| l.map(|v| v + delta)) }
    }

    /// A-weighted band levels `L_oct + A_oct`.
    pub fn a_weighted_bands(&self) -> [Option<f64>; NUM_BANDS] {
        let mut out = [None; NUM_BANDS];
        for (band, level) in self.levels.iter().enumerate() {
            out[band] = level.map(|l| l + A_WEIGHTING_DB[band]);
        }
        out
    }

    /// Energetic sum of the A-weighted bands, dB(A).
    pub fn a_weighted_level(&self) -> f64 {
        energetic_sum(self.a_weighted_bands().iter().flatten().copied())
    }
}

impl TryFrom<[Option<f64>; NUM_BANDS]> for OctaveSpectrum {
    type Error = Error;

    fn try_from(levels: [Option<f64>; NUM_BANDS]) -> Result<Self> {
        Self::with_absent(levels)
    }
}

impl From<OctaveSpectrum> for [Option<f64>; NUM_BANDS] {
    fn from(s: OctaveSpectrum) -> Self {
        s.levels
    }
}

/// `10·log10(Σ 10^(L/10))`.
pub fn energetic_sum(levels: impl IntoIterator<Item = f64>) -> f64 {
    // Factor out the maximum so large levels do not overflow the powers.
    let levels: Vec<f64> = levels.into_iter().collect();
    let max = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = levels.iter().map(|l| 10f64.powf((l - max) / 10.0)).sum();
    max + 10.0 * sum.log10()
}

/// A-weighted level of a spectrum, dB(A).
pub fn a_weighted_level(spectrum: &OctaveSpectrum) -> f64 {
    spectrum.a_weighted_level()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_kilohertz_band_is_unweighted() {
        let s = OctaveSpectrum::single_band(3, 60.0).unwrap();
        assert_abs_diff_eq!(s.a_weighted_level(), 60.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_spectrum_matches_direct_summation() {
        // Direct oracle: sum of linear powers written out band by band.
        let direct = 10.0
            * (10f64.powf((60.0 - 16.1) / 10.0)
                + 10f64.powf((60.0 - 8.6) / 10.0)
                + 10f64.powf((60.0 - 3.2) / 10.0)
                + 10f64.powf(60.0 / 10.0)
                + 10f64.powf((60.0 + 1.2) / 10.0)
                + 10f64.powf((60.0 + 1.0) / 10.0)
                + 10f64.powf((60.0 - 1.1) / 10.0))
            .log10();
        let s = OctaveSpectrum::new([60.0; 7]).unwrap();
        assert_abs_diff_eq!(s.a_weighted_level(), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(s.a_weighted_level(), 66.99, epsilon = 5e-3);
    }

    #[test]
    fn equal_contributions_add_ten_log_seven() {
        let s = OctaveSpectrum::new(A_WEIGHTING_DB.map(|a| 60.0 - a)).unwrap();
        assert_abs_diff_eq!(s.a_weighted_level(), 60.0 + 10.0 * 7f64.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.a_weighted_level(), 68.45, epsilon = 5e-3);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(OctaveSpectrum::with_absent([None; 7]).is_err());
        assert!(OctaveSpectrum::new([60.0, 60.0, f64::NAN, 60.0, 60.0, 60.0, 60.0]).is_err());
        assert!(OctaveSpectrum::single_band(7, 60.0).is_err());
    }

    proptest! {
        #[test]
        fn energetic_sum_bounds(levels in prop::array::uniform7(0.0f64..120.0)) {
            let s = OctaveSpectrum::new(levels).unwrap();
            let max = s.a_weighted_bands().iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = s.a_weighted_level();
            prop_assert!(l >= max - 1e-9);
            prop_assert!(l <= max + 10.0 * 7f64.log10() + 1e-9);
        }
    }
}
