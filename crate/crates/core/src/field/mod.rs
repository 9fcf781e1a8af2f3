//! Sound-field providers queried by the Monte-Carlo emulation.
//!
//! Geometry convention: the nominal source sits at the origin and the
//! nominal receiver of position `i` at `(r_i, 0)`. Offsets are planar
//! displacements in metres, `dx` along the path and `dy` across it.

mod grid;
mod office;

pub use grid::{
    grid_from_loglinear, GridField, GridPlane, GridPosition, HalfPlane, LevelStep, GRID_NODES, GRID_PITCH_M,
};
pub use office::{synth_office, OfficeConfigSpec, OfficeLabel, PathGeometry, SPEECH_SPECTRUM_1M_DB};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MeasurementPath, MeasurementPosition};
use crate::spectrum::{OctaveSpectrum, NUM_BANDS};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
}

impl Offset {
    pub const ZERO: Offset = Offset { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

/// Distance between a displaced source and a displaced receiver whose
/// nominal separation is `nominal_m` along the path axis.
pub fn offset_distance(nominal_m: f64, source: Offset, receiver: Offset) -> f64 {
    (nominal_m + receiver.dx - source.dx).hypot(receiver.dy - source.dy)
}

pub type BandLevels = [Option<f64>; NUM_BANDS];

pub trait FieldProvider: Sync {
    fn num_positions(&self) -> usize;

    /// Octave-band levels at `position` for the given device offsets.
    fn spectrum_at(&self, position: usize, source: Offset, receiver: Offset) -> Result<BandLevels>;

    fn level_at(&self, position: usize, source: Offset, receiver: Offset, band: usize) -> Result<Option<f64>> {
        if band >= NUM_BANDS {
            return Err(Error::InvalidInput(format!("band index {band} out of range")));
        }
        Ok(self.spectrum_at(position, source, receiver)?[band])
    }
}

fn check_query(provider: &dyn FieldProvider, position: usize, source: Offset, receiver: Offset) -> Result<()> {
    if position >= provider.num_positions() {
        return Err(Error::FieldDomain(format!(
            "position {position} outside field with {} positions",
            provider.num_positions()
        )));
    }
    if !(source.is_finite() && receiver.is_finite()) {
        return Err(Error::FieldDomain(format!("non-finite offset {source:?} / {receiver:?}")));
    }
    Ok(())
}

/// Field that is locally uniform around every workstation: the nominal
/// spectrum is returned whatever the offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousField {
    spectra: Vec<OctaveSpectrum>,
}

impl HomogeneousField {
    pub fn from_path(path: &MeasurementPath) -> Self {
        Self { spectra: path.positions.iter().map(|p| p.spectrum).collect() }
    }
}

impl FieldProvider for HomogeneousField {
    fn num_positions(&self) -> usize {
        self.spectra.len()
    }

    fn spectrum_at(&self, position: usize, source: Offset, receiver: Offset) -> Result<BandLevels> {
        check_query(self, position, source, receiver)?;
        Ok(*self.spectra[position].levels())
    }
}

/// Idealised field decaying linearly in `log2` of the distance, per octave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearField {
    /// Octave levels on the fitted line at 4 m, dB.
    pub ref_levels_4m_db: [f64; NUM_BANDS],
    /// Octave decay per doubling of distance, dB.
    pub decay_rates_db: [f64; NUM_BANDS],
    /// Nominal source-receiver distance of each position, m.
    pub distances_m: Vec<f64>,
    /// Deterministic per-position level deviation, dB, added to every band.
    pub ripple_db: Vec<f64>,
}

impl LogLinearField {
    pub fn new(
        ref_levels_4m_db: [f64; NUM_BANDS],
        decay_rates_db: [f64; NUM_BANDS],
        distances_m: Vec<f64>,
        ripple_db: Option<Vec<f64>>,
    ) -> Result<Self> {
        if decay_rates_db.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(format!("decay rates must be finite and >= 0: {decay_rates_db:?}")));
        }
        if ref_levels_4m_db.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidInput("reference levels must be finite".into()));
        }
        if distances_m.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidInput("distances must be positive".into()));
        }
        let ripple_db = ripple_db.unwrap_or_else(|| vec![0.0; distances_m.len()]);
        if ripple_db.len() != distances_m.len() {
            return Err(Error::InvalidInput(format!(
                "{} ripple values for {} positions",
                ripple_db.len(),
                distances_m.len()
            )));
        }
        Ok(Self { ref_levels_4m_db, decay_rates_db, distances_m, ripple_db })
    }

    /// Levels at an arbitrary distance for a given position's ripple.
    pub fn spectrum_at_distance(&self, position: usize, distance_m: f64) -> BandLevels {
        let x = (distance_m / 4.0).log2();
        let ripple = self.ripple_db[position];
        let mut out = [None; NUM_BANDS];
        for (band, slot) in out.iter_mut().enumerate() {
            *slot = Some(self.ref_levels_4m_db[band] - self.decay_rates_db[band] * x + ripple);
        }
        out
    }

    /// Nominal measurement path sampled at zero offsets.
    pub fn nominal_path(&self, id: impl Into<String>) -> Result<MeasurementPath> {
        let positions = (0..self.distances_m.len())
            .map(|i| {
                let spectrum = OctaveSpectrum::with_absent(self.spectrum_at(i, Offset::ZERO, Offset::ZERO)?)?;
                Ok(MeasurementPosition::new((i + 1).to_string(), self.distances_m[i], spectrum))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasurementPath::new(id, positions))
    }
}

impl FieldProvider for LogLinearField {
    fn num_positions(&self) -> usize {
        self.distances_m.len()
    }

    fn spectrum_at(&self, position: usize, source: Offset, receiver: Offset) -> Result<BandLevels> {
        check_query(self, position, source, receiver)?;
        let d = offset_distance(self.distances_m[position], source, receiver);
        if !(d > 0.0) {
            return Err(Error::FieldDomain(format!("source and receiver coincide at position {position}")));
        }
        Ok(self.spectrum_at_distance(position, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compute_snq, SnqOptions};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn distances() -> Vec<f64> {
        (0..7).map(|i| 2.0 * 2f64.powf(i as f64 / 3.0)).collect()
    }

    #[test]
    fn log_linear_closed_form() {
        let f = LogLinearField::new([50.0; 7], [6.0; 7], vec![2.0, 4.0, 8.0], Some(vec![0.0, 0.5, 0.0])).unwrap();
        assert_eq!(f.level_at(0, Offset::ZERO, Offset::ZERO, 2).unwrap(), Some(56.0));
        assert_eq!(f.level_at(1, Offset::ZERO, Offset::ZERO, 2).unwrap(), Some(50.5));
        // Moving the receiver 4 m further doubles the distance of position 1.
        let far = f.level_at(1, Offset::ZERO, Offset::new(4.0, 0.0), 0).unwrap().unwrap();
        assert_abs_diff_eq!(far, 44.5, epsilon = 1e-12);
        assert!(f.level_at(3, Offset::ZERO, Offset::ZERO, 0).is_err());
        assert!(f.level_at(0, Offset::new(f64::NAN, 0.0), Offset::ZERO, 0).is_err());
        assert!(LogLinearField::new([50.0; 7], [-1.0; 7], vec![2.0], None).is_err());
    }

    #[test]
    fn equal_rates_give_exact_aggregate_decay() {
        let f = LogLinearField::new(SPEECH_SPECTRUM_1M_DB, [5.3; 7], distances(), None).unwrap();
        let fit = compute_snq(&f.nominal_path("P").unwrap(), &SnqOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.snq.d2s_dba, 5.3, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn unequal_rates_bracket_aggregate(rates in prop::array::uniform7(2.0f64..9.0)) {
            let f = LogLinearField::new(SPEECH_SPECTRUM_1M_DB, rates, distances(), None).unwrap();
            let fit = compute_snq(&f.nominal_path("P").unwrap(), &SnqOptions::default()).unwrap();
            let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(fit.snq.d2s_dba >= lo - 1e-9 && fit.snq.d2s_dba <= hi + 1e-9);
            prop_assert!(fit.residuals_dba.iter().all(|r| r.abs() < 1.0));
        }
    }

    #[test]
    fn homogeneous_field_ignores_offsets() {
        let f = LogLinearField::new(SPEECH_SPECTRUM_1M_DB, [6.0; 7], distances(), None).unwrap();
        let path = f.nominal_path("P").unwrap();
        let h = HomogeneousField::from_path(&path);
        assert_eq!(
            h.spectrum_at(2, Offset::new(0.1, -0.05), Offset::new(-0.07, 0.02)).unwrap(),
            *path.positions[2].spectrum.levels()
        );
    }
}
