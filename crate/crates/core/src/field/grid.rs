use serde::{Deserialize, Serialize};

use super::{check_query, BandLevels, FieldProvider, LogLinearField, Offset};
use crate::error::{Error, Result};
use crate::spectrum::NUM_BANDS;

/// Spacing of the apparatus grid, m. Three nodes per axis span ±1 pitch.
pub const GRID_PITCH_M: f64 = 0.10;

/// Nodes per device: a 3×3 square, indexed `iy·3 + ix`.
pub const GRID_NODES: usize = 9;

const GRID_SIDE: usize = 3;

pub const GRID_FORMAT_VERSION: u32 = 1;

/// Levels of one position for every source-node/receiver-node pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosition {
    pub distance_m: f64,
    /// `[band][source node][receiver node]`, dB.
    pub levels_db: [[[f64; GRID_NODES]; GRID_NODES]; NUM_BANDS],
}

/// Field sampled on a 3×3 source grid × 3×3 receiver grid per position,
/// interpolated bilinearly in each device plane.
///
/// Offsets outside the grid are clamped to its boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub format_version: u32,
    pub pitch_m: f64,
    pub positions: Vec<GridPosition>,
}

/// Node offset in one axis for index 0, 1, 2.
fn node_coordinate(index: usize, pitch: f64) -> f64 {
    (index as f64 - 1.0) * pitch
}

pub fn node_offset(node: usize, pitch: f64) -> Offset {
    Offset::new(node_coordinate(node % GRID_SIDE, pitch), node_coordinate(node / GRID_SIDE, pitch))
}

/// Lower node index and fractional position along one clamped axis.
fn axis_cell(offset: f64, pitch: f64) -> (usize, f64) {
    let t = (offset.clamp(-pitch, pitch) + pitch) / pitch;
    let i0 = (t.floor() as usize).min(GRID_SIDE - 2);
    (i0, t - i0 as f64)
}

/// The four surrounding nodes and their bilinear weights.
fn plane_weights(offset: Offset, pitch: f64) -> [(usize, f64); 4] {
    let (ix, fx) = axis_cell(offset.dx, pitch);
    let (iy, fy) = axis_cell(offset.dy, pitch);
    let node = |x: usize, y: usize| y * GRID_SIDE + x;
    [
        (node(ix, iy), (1.0 - fx) * (1.0 - fy)),
        (node(ix + 1, iy), fx * (1.0 - fy)),
        (node(ix, iy + 1), (1.0 - fx) * fy),
        (node(ix + 1, iy + 1), fx * fy),
    ]
}

impl GridField {
    pub fn new(pitch_m: f64, positions: Vec<GridPosition>) -> Result<Self> {
        let field = Self { format_version: GRID_FORMAT_VERSION, pitch_m, positions };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != GRID_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported grid format_version {}", self.format_version)));
        }
        if !(self.pitch_m.is_finite() && self.pitch_m > 0.0) {
            return Err(Error::InvalidInput(format!("grid pitch must be > 0, got {}", self.pitch_m)));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !(p.distance_m.is_finite() && p.distance_m > 0.0) {
                return Err(Error::InvalidInput(format!("grid position {i}: non-positive distance")));
            }
            if p.levels_db.iter().flatten().flatten().any(|l| !l.is_finite()) {
                return Err(Error::InvalidInput(format!("grid position {i}: non-finite level")));
            }
        }
        Ok(())
    }

    pub fn distances(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.distance_m).collect()
    }

    pub fn node_level(&self, position: usize, band: usize, source_node: usize, receiver_node: usize) -> f64 {
        self.positions[position].levels_db[band][source_node][receiver_node]
    }
}

impl FieldProvider for GridField {
    fn num_positions(&self) -> usize {
        self.positions.len()
    }

    fn spectrum_at(&self, position: usize, source: Offset, receiver: Offset) -> Result<BandLevels> {
        check_query(self, position, source, receiver)?;
        let ws = plane_weights(source, self.pitch_m);
        let wr = plane_weights(receiver, self.pitch_m);
        let levels = &self.positions[position].levels_db;
        let mut out = [None; NUM_BANDS];
        for (band, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(sn, sw) in &ws {
                for &(rn, rw) in &wr {
                    acc += sw * rw * levels[band][sn][rn];
                }
            }
            *slot = Some(acc);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPlane {
    Source,
    Receiver,
}

/// Nodes strictly on one side of a device's nominal position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfPlane {
    PositiveX,
    NegativeX,
    PositiveY,
    NegativeY,
}

impl HalfPlane {
    fn contains(self, o: Offset) -> bool {
        match self {
            HalfPlane::PositiveX => o.dx > 0.0,
            HalfPlane::NegativeX => o.dx < 0.0,
            HalfPlane::PositiveY => o.dy > 0.0,
            HalfPlane::NegativeY => o.dy < 0.0,
        }
    }
}

/// Level step added to the grid nodes of one device half-plane at one
/// position, emulating a screen edge or reflection path that appears when
/// the device is moved slightly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStep {
    pub position: usize,
    pub plane: GridPlane,
    pub half_plane: HalfPlane,
    pub magnitude_db: f64,
}

/// Samples a log-linear field at every node pair, then applies `steps`.
pub fn grid_from_loglinear(field: &LogLinearField, steps: &[LevelStep]) -> Result<GridField> {
    let pitch = GRID_PITCH_M;
    let mut positions = Vec::with_capacity(field.distances_m.len());
    for (i, &r) in field.distances_m.iter().enumerate() {
        let mut levels_db = [[[0.0; GRID_NODES]; GRID_NODES]; NUM_BANDS];
        for sn in 0..GRID_NODES {
            for rn in 0..GRID_NODES {
                let spectrum = field.spectrum_at(i, node_offset(sn, pitch), node_offset(rn, pitch))?;
                for band in 0..NUM_BANDS {
                    levels_db[band][sn][rn] = spectrum[band].expect("log-linear field has every band");
                }
            }
        }
        positions.push(GridPosition { distance_m: r, levels_db });
    }
    for step in steps {
        let pos = positions.get_mut(step.position).ok_or_else(|| {
            Error::InvalidInput(format!("level step at position {} outside the field", step.position))
        })?;
        for band in pos.levels_db.iter_mut() {
            for (sn, row) in band.iter_mut().enumerate() {
                for (rn, level) in row.iter_mut().enumerate() {
                    let node = match step.plane {
                        GridPlane::Source => sn,
                        GridPlane::Receiver => rn,
                    };
                    if step.half_plane.contains(node_offset(node, pitch)) {
                        *level += step.magnitude_db;
                    }
                }
            }
        }
    }
    GridField::new(pitch, positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SPEECH_SPECTRUM_1M_DB;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn loglinear() -> LogLinearField {
        LogLinearField::new(SPEECH_SPECTRUM_1M_DB, [6.0, 6.5, 5.5, 6.0, 7.0, 6.2, 5.0], vec![2.0, 3.0, 4.5, 7.0], None)
            .unwrap()
    }

    #[test]
    fn zero_offset_returns_centre_node() {
        let g = grid_from_loglinear(&loglinear(), &[]).unwrap();
        for band in 0..NUM_BANDS {
            assert_eq!(g.level_at(1, Offset::ZERO, Offset::ZERO, band).unwrap().unwrap(), g.node_level(1, band, 4, 4));
        }
    }

    #[test]
    fn nodes_match_the_sampled_field() {
        let f = loglinear();
        let g = grid_from_loglinear(&f, &[]).unwrap();
        for pos in 0..4 {
            for sn in 0..GRID_NODES {
                for rn in 0..GRID_NODES {
                    let s = node_offset(sn, GRID_PITCH_M);
                    let r = node_offset(rn, GRID_PITCH_M);
                    assert_eq!(g.spectrum_at(pos, s, r).unwrap(), f.spectrum_at(pos, s, r).unwrap());
                }
            }
        }
    }

    #[test]
    fn midpoint_is_mean_of_neighbours() {
        let g = grid_from_loglinear(&loglinear(), &[]).unwrap();
        let got = g.level_at(2, Offset::new(0.05, 0.0), Offset::new(0.0, -0.1), 3).unwrap().unwrap();
        // Source nodes 4 (centre) and 5 (+x); receiver node 1 (y = −pitch).
        let want = 0.5 * (g.node_level(2, 3, 4, 1) + g.node_level(2, 3, 5, 1));
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn offsets_are_clamped_to_the_grid() {
        let g = grid_from_loglinear(&loglinear(), &[]).unwrap();
        let edge = g.spectrum_at(0, Offset::new(0.1, -0.1), Offset::new(-0.1, 0.1)).unwrap();
        let beyond = g.spectrum_at(0, Offset::new(0.35, -0.2), Offset::new(-0.4, 1.0)).unwrap();
        assert_eq!(edge, beyond);
    }

    #[test]
    fn steps_touch_only_their_half_plane() {
        let step =
            LevelStep { position: 1, plane: GridPlane::Source, half_plane: HalfPlane::PositiveX, magnitude_db: 3.0 };
        let base = grid_from_loglinear(&loglinear(), &[]).unwrap();
        let g = grid_from_loglinear(&loglinear(), &[step]).unwrap();
        for sn in 0..GRID_NODES {
            let expected = if sn % 3 == 2 { 3.0 } else { 0.0 };
            assert_abs_diff_eq!(g.node_level(1, 0, sn, 4) - base.node_level(1, 0, sn, 4), expected, epsilon = 1e-12);
            assert_eq!(g.node_level(0, 0, sn, 4), base.node_level(0, 0, sn, 4));
        }
        let bad = LevelStep { position: 9, ..step };
        assert!(grid_from_loglinear(&loglinear(), &[bad]).is_err());
    }

    proptest! {
        #[test]
        fn exact_for_planewise_affine_fields(
            c in -5.0f64..5.0, a in prop::array::uniform4(-20.0f64..20.0),
            s in prop::array::uniform2(-0.1f64..0.1), r in prop::array::uniform2(-0.1f64..0.1),
        ) {
            let f = |so: Offset, ro: Offset| 50.0 + c + a[0] * so.dx + a[1] * so.dy + a[2] * ro.dx + a[3] * ro.dy;
            let mut levels_db = [[[0.0; GRID_NODES]; GRID_NODES]; NUM_BANDS];
            for band in levels_db.iter_mut() {
                for (sn, row) in band.iter_mut().enumerate() {
                    for (rn, l) in row.iter_mut().enumerate() {
                        *l = f(node_offset(sn, GRID_PITCH_M), node_offset(rn, GRID_PITCH_M));
                    }
                }
            }
            let g = GridField::new(GRID_PITCH_M, vec![GridPosition { distance_m: 3.0, levels_db }]).unwrap();
            let (so, ro) = (Offset::new(s[0], s[1]), Offset::new(r[0], r[1]));
            let got = g.level_at(0, so, ro, 5).unwrap().unwrap();
            prop_assert!((got - f(so, ro)).abs() < 1e-10);
        }
    }
}
