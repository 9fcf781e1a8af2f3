//! Closed-form measurement uncertainty of the single number quantities.
//!
//! Two evaluations of the first-order propagation law are provided:
//!
//! * [`propagate_jacobian`] sums the squared partial derivatives from
//!   [`snq_partials`] directly;
//! * [`analytic_budget`] evaluates the covariance expressions, split into
//!   level-driven and distance-driven parts, with the intermediate terms
//!   exposed. [`summation_form_budget`] evaluates the same expressions from
//!   raw sums over the positions.
//!
//! All three agree to rounding for any path; the tests enforce it.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::error::{Error, Result};
use crate::metrics::{
    fit_decay, regression_stats_for, DecayData, MeasurementPath, RegressionStats, SnqOptions, SnqSet, LN_2,
};
use crate::spectrum::{OctaveSpectrum, NUM_BANDS};

/// Octave-band level uncertainties of a class 1 sound level meter, dB.
pub const CLASS1_OCTAVE_UNCERTAINTY_DB: [f64; NUM_BANDS] = [0.9, 0.9, 0.8, 0.8, 0.9, 1.2, 1.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_BANDS]", into = "[f64; NUM_BANDS]")]
pub struct OctaveUncertaintyTable {
    u_oct: [f64; NUM_BANDS],
}

impl Default for OctaveUncertaintyTable {
    fn default() -> Self {
        Self { u_oct: CLASS1_OCTAVE_UNCERTAINTY_DB }
    }
}

impl OctaveUncertaintyTable {
    /// Entries must be finite and non-negative. Zero entries are accepted so
    /// that error sources can be switched off in simulations.
    pub fn new(u_oct: [f64; NUM_BANDS]) -> Result<Self> {
        if u_oct.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
            return Err(Error::InvalidInput(format!("octave uncertainties must be finite and >= 0: {u_oct:?}")));
        }
        Ok(Self { u_oct })
    }

    pub fn values(&self) -> &[f64; NUM_BANDS] {
        &self.u_oct
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { u_oct: self.u_oct.map(|u| u * factor) }
    }
}

impl TryFrom<[f64; NUM_BANDS]> for OctaveUncertaintyTable {
    type Error = Error;

    fn try_from(u: [f64; NUM_BANDS]) -> Result<Self> {
        Self::new(u)
    }
}

impl From<OctaveUncertaintyTable> for [f64; NUM_BANDS] {
    fn from(t: OctaveUncertaintyTable) -> Self {
        t.u_oct
    }
}

/// Standard uncertainty of the A-weighted level of a spectrum, dB(A).
///
/// Each band contributes with its share of the A-weighted energy.
pub fn level_uncertainty(spectrum: &OctaveSpectrum, table: &OctaveUncertaintyTable) -> f64 {
    let total = spectrum.a_weighted_level();
    let u2: f64 = spectrum
        .a_weighted_bands()
        .iter()
        .zip(table.values())
        .filter_map(|(l, u)| l.map(|l| (10f64.powf((l - total) / 10.0) * u).powi(2)))
        .sum();
    u2.sqrt()
}

/// Distance uncertainty: instrument (tape or rangefinder) plus apparatus
/// positioning.
///
/// Source and microphone are each displaced by a planar normal error, the
/// same standard deviation on both axes, such that the apparatus lies in a
/// square of side `square_side_m` with probability `square_coverage`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceErrorModel {
    pub u_tape_m: f64,
    pub square_side_m: f64,
    pub square_coverage: f64,
    /// Whether the positioning part enters the distance uncertainty used
    /// by the closed-form expressions.
    pub include_positioning: bool,
}

impl Default for DistanceErrorModel {
    fn default() -> Self {
        Self { u_tape_m: 0.05, square_side_m: 0.20, square_coverage: 0.95, include_positioning: true }
    }
}

impl DistanceErrorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_tape_m.is_finite() && self.u_tape_m >= 0.0) {
            return Err(Error::InvalidInput(format!("u_tape_m must be >= 0, got {}", self.u_tape_m)));
        }
        if !(self.square_side_m.is_finite() && self.square_side_m > 0.0) {
            return Err(Error::InvalidInput(format!("square_side_m must be > 0, got {}", self.square_side_m)));
        }
        if !(self.square_coverage > 0.0 && self.square_coverage < 1.0) {
            return Err(Error::InvalidInput(format!(
                "square_coverage must lie in (0, 1), got {}",
                self.square_coverage
            )));
        }
        Ok(())
    }

    /// Per-axis standard deviation of the positioning error.
    ///
    /// Both axes are independent, so each must stay within half a side with
    /// probability `sqrt(coverage)`.
    pub fn sigma_axis_m(&self) -> f64 {
        let per_axis = self.square_coverage.sqrt();
        0.5 * self.square_side_m / (std::f64::consts::SQRT_2 * erf_inv(per_axis))
    }

    /// Standard deviation of the source-receiver distance caused by
    /// displacing both devices.
    pub fn u_pos_m(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.sigma_axis_m()
    }

    /// Distance uncertainty fed to the closed-form expressions.
    pub fn u_r_total_m(&self) -> f64 {
        if self.include_positioning {
            self.u_tape_m.hypot(self.u_pos_m())
        } else {
            self.u_tape_m
        }
    }
}

/// Per-position standard uncertainty of the A-weighted level, dB(A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelUncertaintyVector(pub Vec<f64>);

impl LevelUncertaintyVector {
    pub fn from_path(path: &MeasurementPath, table: &OctaveUncertaintyTable) -> Self {
        Self(path.positions.iter().map(|p| level_uncertainty(&p.spectrum, table)).collect())
    }

    pub fn homogeneous(n: usize, u: f64) -> Self {
        Self(vec![u; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `α_i = L_i + 2·D2S·log2(r_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector(pub Vec<f64>);

pub fn alpha(data: &DecayData, d2s_dba: f64) -> AlphaVector {
    AlphaVector(data.distances_m.iter().zip(&data.levels_dba).map(|(r, l)| l + 2.0 * d2s_dba * r.log2()).collect())
}

/// Partial derivatives of the three quantities with respect to each
/// position's level and distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnqJacobian {
    pub d2s_dl: Vec<f64>,
    pub d2s_dr: Vec<f64>,
    pub lpas4m_dl: Vec<f64>,
    pub lpas4m_dr: Vec<f64>,
    pub rc_dl: Vec<f64>,
    pub rc_dr: Vec<f64>,
}

struct Prepared {
    snq: SnqSet,
    stats: RegressionStats,
    alpha: Vec<f64>,
    mean_alpha: f64,
}

impl Prepared {
    fn new(data: &DecayData, opts: &SnqOptions) -> Result<Self> {
        let snq = fit_decay(data, opts)?.snq;
        let stats = regression_stats_for(&data.distances_m)?;
        let alpha = alpha(data, snq.d2s_dba).0;
        let mean_alpha = mean(&alpha);
        Ok(Self { snq, stats, alpha, mean_alpha })
    }

    fn n(&self) -> f64 {
        self.stats.n() as f64
    }

    /// `ln2·rc/D2S`.
    fn rc_gain(&self) -> f64 {
        LN_2 * self.snq.rc_m / self.snq.d2s_dba
    }
}

pub fn snq_partials(data: &DecayData, opts: &SnqOptions) -> Result<SnqJacobian> {
    let p = Prepared::new(data, opts)?;
    Ok(partials_from(&p, &data.distances_m))
}

fn partials_from(p: &Prepared, distances: &[f64]) -> SnqJacobian {
    let n = p.n();
    let n_var = p.stats.n_var();
    let d = p.snq.d2s_dba;
    let m = p.stats.mean_log2_r_over_4;
    let gain = p.rc_gain();
    let g = p.snq.log2_rc_over_4();

    let d2s_dl: Vec<f64> = p.stats.x.iter().map(|x| -(x - p.stats.mean_x) / n_var).collect();
    let d2s_dr: Vec<f64> =
        p.alpha.iter().zip(distances).map(|(a, r)| -(a - p.mean_alpha) / (LN_2 * r * n_var)).collect();
    let lpas4m_dl: Vec<f64> = d2s_dl.iter().map(|dd| 1.0 / n + dd * m).collect();
    let lpas4m_dr: Vec<f64> = d2s_dr.iter().zip(distances).map(|(dd, r)| d / (n * LN_2 * r) + dd * m).collect();
    let rc_dl = lpas4m_dl.iter().zip(&d2s_dl).map(|(dl4, dd)| gain * (dl4 - g * dd)).collect();
    let rc_dr = lpas4m_dr.iter().zip(&d2s_dr).map(|(dl4, dd)| gain * (dl4 - g * dd)).collect();
    SnqJacobian { d2s_dl, d2s_dr, lpas4m_dl, lpas4m_dr, rc_dl, rc_dr }
}

/// Variance of one quantity split by input kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentUncertainty {
    /// Standard uncertainty.
    pub u: f64,
    /// Level-driven variance `u²(L)`.
    pub u2_level: f64,
    /// Distance-driven variance `u²(r)`.
    pub u2_distance: f64,
}

impl ComponentUncertainty {
    fn from_parts(u2_level: f64, u2_distance: f64) -> Self {
        Self { u: (u2_level + u2_distance).max(0.0).sqrt(), u2_level, u2_distance }
    }
}

/// Intermediate quantities of the covariance expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetTerms {
    pub t3: f64,
    pub t4: f64,
    pub t5: f64,
    pub t6: f64,
    /// `Cov(log2 r, (log2 r − mean)·u_L²)`.
    pub cov_x_dev_ul2: f64,
    /// `Cov(α, (α − ᾱ)/r²)`.
    pub cov_alpha_dev_alpha_over_r2: f64,
    /// `Cov(α, 1/r²)`.
    pub cov_alpha_inv_r2: f64,
    /// `Cov(log2 r, u_L²)`.
    pub cov_x_ul2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBudget {
    pub snq: SnqSet,
    pub d2s: ComponentUncertainty,
    pub lpas4m: ComponentUncertainty,
    pub rc: ComponentUncertainty,
    /// Distance uncertainty used, m.
    pub u_r_m: f64,
    pub terms: Option<BudgetTerms>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance.
fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

fn check_inputs(data: &DecayData, u_l: &LevelUncertaintyVector, u_r: f64) -> Result<()> {
    if u_l.len() != data.len() {
        return Err(Error::InvalidInput(format!("{} level uncertainties for {} positions", u_l.len(), data.len())));
    }
    if u_l.0.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
        return Err(Error::InvalidInput("level uncertainties must be finite and >= 0".into()));
    }
    if !(u_r.is_finite() && u_r >= 0.0) {
        return Err(Error::InvalidInput(format!("distance uncertainty must be >= 0, got {u_r}")));
    }
    Ok(())
}

/// Direct first-order propagation: `Σ(∂q/∂L_i·u_Li)² + Σ(∂q/∂r_i·u_r)²`.
pub fn propagate_jacobian(
    data: &DecayData,
    u_l: &LevelUncertaintyVector,
    u_r: f64,
    opts: &SnqOptions,
) -> Result<UncertaintyBudget> {
    check_inputs(data, u_l, u_r)?;
    let p = Prepared::new(data, opts)?;
    let j = partials_from(&p, &data.distances_m);
    let level = |dl: &[f64]| dl.iter().zip(&u_l.0).map(|(d, u)| (d * u).powi(2)).sum::<f64>();
    let dist = |dr: &[f64]| dr.iter().map(|d| (d * u_r).powi(2)).sum::<f64>();
    Ok(UncertaintyBudget {
        snq: p.snq,
        d2s: ComponentUncertainty::from_parts(level(&j.d2s_dl), dist(&j.d2s_dr)),
        lpas4m: ComponentUncertainty::from_parts(level(&j.lpas4m_dl), dist(&j.lpas4m_dr)),
        rc: ComponentUncertainty::from_parts(level(&j.rc_dl), dist(&j.rc_dr)),
        u_r_m: u_r,
        terms: None,
    })
}

/// Covariance-form evaluation with the distance uncertainty taken from
/// `dist_model`.
pub fn analytic_budget(
    data: &DecayData,
    u_l: &LevelUncertaintyVector,
    dist_model: &DistanceErrorModel,
    opts: &SnqOptions,
) -> Result<UncertaintyBudget> {
    dist_model.validate()?;
    let u_r = dist_model.u_r_total_m();
    let budget = covariance_form_budget(data, u_l, u_r, opts)?;
    if log::log_enabled!(log::Level::Debug) {
        let raw = summation_form_budget(data, u_l, u_r, opts)?;
        log::debug!(
            "covariance vs summation form: u_D2S {} / {}, u_LpAS4m {} / {}, u_rc {} / {}",
            budget.d2s.u,
            raw.d2s.u,
            budget.lpas4m.u,
            raw.lpas4m.u,
            budget.rc.u,
            raw.rc.u
        );
    }
    Ok(budget)
}

/// The closed-form expressions written with population covariances.
pub fn covariance_form_budget(
    data: &DecayData,
    u_l: &LevelUncertaintyVector,
    u_r: f64,
    opts: &SnqOptions,
) -> Result<UncertaintyBudget> {
    check_inputs(data, u_l, u_r)?;
    let p = Prepared::new(data, opts)?;
    let n = p.n();
    let var = p.stats.var_x;
    let x = &p.stats.x;
    let d = p.snq.d2s_dba;
    let m = p.stats.mean_log2_r_over_4;
    let ln2_sq = LN_2 * LN_2;
    let ur2 = u_r * u_r;

    let ul2: Vec<f64> = u_l.0.iter().map(|u| u * u).collect();
    let x_dev_ul2: Vec<f64> = x.iter().zip(&ul2).map(|(xi, u2)| (xi - p.stats.mean_x) * u2).collect();
    let alpha_dev_over_r2: Vec<f64> =
        p.alpha.iter().zip(&data.distances_m).map(|(a, r)| (a - p.mean_alpha) / (r * r)).collect();
    let inv_r2: Vec<f64> = data.distances_m.iter().map(|r| 1.0 / (r * r)).collect();

    let cov_x_dev_ul2 = cov(x, &x_dev_ul2);
    let cov_alpha_dev_alpha_over_r2 = cov(&p.alpha, &alpha_dev_over_r2);
    let cov_alpha_inv_r2 = cov(&p.alpha, &inv_r2);
    let cov_x_ul2 = cov(x, &ul2);

    let d2s_l = cov_x_dev_ul2 / (n * var * var);
    let d2s_r = ur2 * cov_alpha_dev_alpha_over_r2 / (ln2_sq * n * var * var);

    let l4_l = mean(&ul2) / n + m * m * d2s_l - 2.0 / n * m * cov_x_ul2 / var;
    let l4_r = d * d * ur2 / (n * ln2_sq) * p.stats.mean_inv_r2 + m * m * d2s_r
        - 2.0 * d * ur2 / (n * ln2_sq) * m * cov_alpha_inv_r2 / var;

    let gain2 = p.rc_gain().powi(2);
    let g = p.snq.log2_rc_over_4();
    let rc_l = gain2 * (l4_l + (g * g - 2.0 * g * m) * d2s_l + 2.0 * g * cov_x_ul2 / (n * var));
    let rc_r =
        gain2 * (l4_r + (g * g - 2.0 * g * m) * d2s_r + 2.0 * g * d * ur2 * cov_alpha_inv_r2 / (n * ln2_sq * var));

    let t3 = -cov_x_ul2 / var;
    let t4 = -cov_alpha_inv_r2 / (LN_2 * var);
    let terms = BudgetTerms {
        t3,
        t4,
        t5: t3 / n + m * d2s_l,
        t6: d * ur2 * t4 / (n * LN_2) + m * d2s_r,
        cov_x_dev_ul2,
        cov_alpha_dev_alpha_over_r2,
        cov_alpha_inv_r2,
        cov_x_ul2,
    };

    Ok(UncertaintyBudget {
        snq: p.snq,
        d2s: ComponentUncertainty::from_parts(d2s_l, d2s_r),
        lpas4m: ComponentUncertainty::from_parts(l4_l, l4_r),
        rc: ComponentUncertainty::from_parts(rc_l, rc_r),
        u_r_m: u_r,
        terms: Some(terms),
    })
}

/// The same expressions evaluated from raw sums over the positions, with
/// the cross terms `T3..T6` accumulated position by position.
pub fn summation_form_budget(
    data: &DecayData,
    u_l: &LevelUncertaintyVector,
    u_r: f64,
    opts: &SnqOptions,
) -> Result<UncertaintyBudget> {
    check_inputs(data, u_l, u_r)?;
    let p = Prepared::new(data, opts)?;
    let n = p.n();
    let n_var = p.stats.n_var();
    let d = p.snq.d2s_dba;
    let m = p.stats.mean_log2_r_over_4;
    let ur2 = u_r * u_r;
    let r = &data.distances_m;

    let mut d2s_l = 0.0;
    let mut d2s_r_sum = 0.0;
    let mut sum_ul2 = 0.0;
    let mut sum_inv_r2 = 0.0;
    let mut t3 = 0.0;
    let mut t4 = 0.0;
    for i in 0..p.stats.n() {
        let dx = p.stats.x[i] - p.stats.mean_x;
        let ul2 = u_l.0[i] * u_l.0[i];
        let dd_dl = -dx / n_var;
        let dd_dr = -(p.alpha[i] - p.mean_alpha) / (LN_2 * r[i] * n_var);
        d2s_l += dx * dx * ul2;
        d2s_r_sum += (p.alpha[i] - p.mean_alpha).powi(2) / (r[i] * r[i]);
        sum_ul2 += ul2;
        sum_inv_r2 += 1.0 / (r[i] * r[i]);
        t3 += dd_dl * ul2;
        t4 += dd_dr / r[i];
    }
    let d2s_l = d2s_l / (n_var * n_var);
    let d2s_r = ur2 / (LN_2 * LN_2 * n_var * n_var) * d2s_r_sum;

    let l4_l = sum_ul2 / (n * n) + m * m * d2s_l + 2.0 / n * m * t3;
    let l4_r = (d * u_r / (n * LN_2)).powi(2) * sum_inv_r2 + m * m * d2s_r + 2.0 * d * ur2 / (n * LN_2) * m * t4;

    let mut t5 = 0.0;
    let mut t6 = 0.0;
    for i in 0..p.stats.n() {
        let dx = p.stats.x[i] - p.stats.mean_x;
        let dd_dl = -dx / n_var;
        let dd_dr = -(p.alpha[i] - p.mean_alpha) / (LN_2 * r[i] * n_var);
        t5 += (1.0 / n + dd_dl * m) * dd_dl * u_l.0[i] * u_l.0[i];
        t6 += (d / (n * LN_2 * r[i]) + dd_dr * m) * dd_dr * ur2;
    }

    let gain2 = p.rc_gain().powi(2);
    let g = p.snq.log2_rc_over_4();
    let rc_l = gain2 * (l4_l + g * g * d2s_l - 2.0 * g * t5);
    let rc_r = gain2 * (l4_r + g * g * d2s_r - 2.0 * g * t6);

    let cov_x_ul2 = -t3 * p.stats.var_x;
    let cov_alpha_inv_r2 = -t4 * LN_2 * p.stats.var_x;
    let terms = BudgetTerms {
        t3,
        t4,
        t5,
        t6,
        cov_x_dev_ul2: d2s_l * n * p.stats.var_x * p.stats.var_x,
        cov_alpha_dev_alpha_over_r2: d2s_r_sum / n,
        cov_alpha_inv_r2,
        cov_x_ul2,
    };

    Ok(UncertaintyBudget {
        snq: p.snq,
        d2s: ComponentUncertainty::from_parts(d2s_l, d2s_r),
        lpas4m: ComponentUncertainty::from_parts(l4_l, l4_r),
        rc: ComponentUncertainty::from_parts(rc_l, rc_r),
        u_r_m: u_r,
        terms: Some(terms),
    })
}
