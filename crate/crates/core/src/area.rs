//! Several measurement paths of one acoustic area: interval overlap,
//! office-wide pooling and the unicity verdict.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analytic::UncertaintyBudget;
use crate::error::{Error, Result};
use crate::metrics::SnqSet;
use crate::monte_carlo::McResult;

/// Default coverage factor for 95 % intervals.
pub const DEFAULT_COVERAGE_K: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnqKind {
    D2s,
    Lpas4m,
    Rc,
}

impl SnqKind {
    pub const ALL: [SnqKind; 3] = [SnqKind::D2s, SnqKind::Lpas4m, SnqKind::Rc];

    pub fn name(self) -> &'static str {
        match self {
            SnqKind::D2s => "D2S",
            SnqKind::Lpas4m => "LpAS4m",
            SnqKind::Rc => "rc",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SnqKind::D2s | SnqKind::Lpas4m => "dB(A)",
            SnqKind::Rc => "m",
        }
    }

    pub fn value(self, snq: &SnqSet) -> f64 {
        match self {
            SnqKind::D2s => snq.d2s_dba,
            SnqKind::Lpas4m => snq.lpas4m_dba,
            SnqKind::Rc => snq.rc_m,
        }
    }
}

impl fmt::Display for SnqKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `center ± half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self { center, half_width }
    }

    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }
}

/// True when the intervals share at least one point; touching endpoints
/// overlap.
pub fn overlap_test(a: Interval, b: Interval) -> bool {
    a.lower() <= b.upper() && b.lower() <= a.upper()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PathUncertainty {
    Analytic(UncertaintyBudget),
    MonteCarlo(McResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub path_id: String,
    pub snq: SnqSet,
    pub uncertainty: PathUncertainty,
    pub coverage_k: f64,
}

impl PathResult {
    pub fn analytic(path_id: impl Into<String>, budget: UncertaintyBudget, coverage_k: f64) -> Self {
        Self { path_id: path_id.into(), snq: budget.snq, uncertainty: PathUncertainty::Analytic(budget), coverage_k }
    }

    pub fn monte_carlo(path_id: impl Into<String>, snq: SnqSet, mc: McResult) -> Self {
        let coverage_k = mc.coverage_k;
        Self { path_id: path_id.into(), snq, uncertainty: PathUncertainty::MonteCarlo(mc), coverage_k }
    }

    /// Central value: the nominal result for analytic budgets, the sample
    /// mean for Monte-Carlo results.
    pub fn center(&self, kind: SnqKind) -> f64 {
        match &self.uncertainty {
            PathUncertainty::Analytic(_) => kind.value(&self.snq),
            PathUncertainty::MonteCarlo(mc) => match kind {
                SnqKind::D2s => mc.d2s.mean,
                SnqKind::Lpas4m => mc.lpas4m.mean,
                SnqKind::Rc => mc.rc.mean,
            },
        }
    }

    pub fn u(&self, kind: SnqKind) -> f64 {
        match &self.uncertainty {
            PathUncertainty::Analytic(b) => match kind {
                SnqKind::D2s => b.d2s.u,
                SnqKind::Lpas4m => b.lpas4m.u,
                SnqKind::Rc => b.rc.u,
            },
            PathUncertainty::MonteCarlo(mc) => match kind {
                SnqKind::D2s => mc.d2s.std_dev,
                SnqKind::Lpas4m => mc.lpas4m.std_dev,
                SnqKind::Rc => mc.rc.std_dev,
            },
        }
    }

    pub fn half_width(&self, kind: SnqKind) -> f64 {
        self.coverage_k * self.u(kind)
    }

    pub fn interval(&self, kind: SnqKind) -> Interval {
        Interval::new(self.center(kind), self.half_width(kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnqPooling {
    pub kind: SnqKind,
    pub pooled_mean: f64,
    /// Population variance of the path centres.
    pub between_path_variance: f64,
    /// Mean of the per-path `u²`.
    pub mean_within_variance: f64,
    pub pooled_u: f64,
    pub half_width: f64,
    /// `overlap[i][j]`: whether the intervals of paths `i` and `j` overlap.
    pub overlap: Vec<Vec<bool>>,
    /// No pair of path intervals is disjoint.
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaResult {
    pub paths: Vec<PathResult>,
    pub coverage_k: f64,
    pub d2s: SnqPooling,
    pub lpas4m: SnqPooling,
    pub rc: SnqPooling,
}

impl AreaResult {
    pub fn pooling(&self, kind: SnqKind) -> &SnqPooling {
        match kind {
            SnqKind::D2s => &self.d2s,
            SnqKind::Lpas4m => &self.lpas4m,
            SnqKind::Rc => &self.rc,
        }
    }

    /// Between-path variance rests on only two paths.
    pub fn few_paths(&self) -> bool {
        self.paths.len() < 3
    }
}

fn pool_one(results: &[PathResult], kind: SnqKind, coverage_k: f64) -> SnqPooling {
    let p = results.len() as f64;
    let centers: Vec<f64> = results.iter().map(|r| r.center(kind)).collect();
    let pooled_mean = centers.iter().sum::<f64>() / p;
    let between_path_variance = centers.iter().map(|c| (c - pooled_mean).powi(2)).sum::<f64>() / p;
    let mean_within_variance = results.iter().map(|r| r.u(kind).powi(2)).sum::<f64>() / p;
    let pooled_u = (between_path_variance + mean_within_variance).sqrt();

    let intervals: Vec<Interval> = results.iter().map(|r| r.interval(kind)).collect();
    let overlap: Vec<Vec<bool>> =
        intervals.iter().map(|a| intervals.iter().map(|b| overlap_test(*a, *b)).collect()).collect();
    let unique = overlap.iter().flatten().all(|&o| o);

    SnqPooling {
        kind,
        pooled_mean,
        between_path_variance,
        mean_within_variance,
        pooled_u,
        half_width: coverage_k * pooled_u,
        overlap,
        unique,
    }
}

/// Pools per-path results: path choice is treated as uniform over the
/// measured paths, so `u² = Var(path centres) + mean(u_path²)`.
pub fn pool_area(results: &[PathResult]) -> Result<AreaResult> {
    if results.len() < 2 {
        return Err(Error::InsufficientPaths { got: results.len() });
    }
    let coverage_k = results[0].coverage_k;
    if results.iter().any(|r| r.coverage_k != coverage_k) {
        return Err(Error::InvalidInput("all paths of an area must share the coverage factor".into()));
    }
    Ok(AreaResult {
        paths: results.to_vec(),
        coverage_k,
        d2s: pool_one(results, SnqKind::D2s, coverage_k),
        lpas4m: pool_one(results, SnqKind::Lpas4m, coverage_k),
        rc: pool_one(results, SnqKind::Rc, coverage_k),
    })
}

/// Standard deviation of all Monte-Carlo samples merged across paths, per
/// quantity `[D2S, LpAS4m, rc]`. Requires results that kept their samples.
pub fn pool_mc_samples(results: &[&McResult]) -> Result<[f64; 3]> {
    if results.len() < 2 {
        return Err(Error::InsufficientPaths { got: results.len() });
    }
    let mut merged: [Vec<f64>; 3] = Default::default();
    for r in results {
        let s = r.samples.as_ref().ok_or_else(|| Error::InvalidInput("Monte-Carlo result has no samples".into()))?;
        merged[0].extend(&s.d2s_dba);
        merged[1].extend(&s.lpas4m_dba);
        merged[2].extend(&s.rc_m);
    }
    Ok(merged.map(|v| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    }))
}

/// Rounds an uncertainty up to the next tenth, the usual reporting
/// practice. Values already on a tenth are kept.
pub fn round_up_tenth(u: f64) -> f64 {
    let scaled = u * 10.0;
    let nearest = scaled.round();
    if (scaled - nearest).abs() < 1e-9 {
        nearest / 10.0
    } else {
        scaled.ceil() / 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnqVerdict {
    pub kind: SnqKind,
    pub unique: bool,
    pub pooled_value: f64,
    pub pooled_u: f64,
    pub half_width: f64,
    /// Path id pairs whose intervals are disjoint.
    pub disjoint_pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnicityReport {
    pub coverage_k: f64,
    pub path_count: usize,
    pub few_paths: bool,
    pub verdicts: Vec<SnqVerdict>,
}

pub fn unicity_report(area: &AreaResult) -> UnicityReport {
    let verdicts = SnqKind::ALL
        .iter()
        .map(|&kind| {
            let pool = area.pooling(kind);
            let mut disjoint_pairs = Vec::new();
            for i in 0..area.paths.len() {
                for j in i + 1..area.paths.len() {
                    if !pool.overlap[i][j] {
                        disjoint_pairs.push((area.paths[i].path_id.clone(), area.paths[j].path_id.clone()));
                    }
                }
            }
            SnqVerdict {
                kind,
                unique: pool.unique,
                pooled_value: pool.pooled_mean,
                pooled_u: pool.pooled_u,
                half_width: pool.half_width,
                disjoint_pairs,
            }
        })
        .collect();
    UnicityReport { coverage_k: area.coverage_k, path_count: area.paths.len(), few_paths: area.few_paths(), verdicts }
}

impl fmt::Display for UnicityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Unicity over {} paths (k = {}):", self.path_count, self.coverage_k)?;
        for v in &self.verdicts {
            let verdict = if v.unique { "single value defensible" } else { "single value questionable" };
            write!(
                f,
                "  {:<7} {:.2} ± {:.1} {} (u = {:.1}): {verdict}",
                v.kind.name(),
                v.pooled_value,
                round_up_tenth(v.half_width),
                v.kind.unit(),
                round_up_tenth(v.pooled_u),
            )?;
            if !v.disjoint_pairs.is_empty() {
                let pairs: Vec<String> = v.disjoint_pairs.iter().map(|(a, b)| format!("{a}/{b}")).collect();
                write!(f, "; disjoint: {}", pairs.join(", "))?;
            }
            writeln!(f)?;
        }
        if self.few_paths {
            writeln!(f, "  note: between-path spread estimated from only {} paths", self.path_count)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ComponentUncertainty;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Analytic result with prescribed centres and uncertainties.
    pub(crate) fn stub(id: &str, centres: [f64; 3], us: [f64; 3]) -> PathResult {
        let snq = SnqSet { d2s_dba: centres[0], lpas4m_dba: centres[1], rc_m: centres[2], threshold_dba: 45.0 };
        let c = |u: f64| ComponentUncertainty { u, u2_level: u * u, u2_distance: 0.0 };
        let budget = UncertaintyBudget { snq, d2s: c(us[0]), lpas4m: c(us[1]), rc: c(us[2]), u_r_m: 0.0, terms: None };
        PathResult::analytic(id, budget, DEFAULT_COVERAGE_K)
    }

    #[test]
    fn overlap_examples() {
        assert!(!overlap_test(Interval::new(6.8, 0.7), Interval::new(5.4, 0.6)));
        assert!(overlap_test(Interval::new(6.8, 0.7), Interval::new(6.8, 0.7)));
        assert!(overlap_test(Interval::new(5.0, 0.5), Interval::new(6.0, 0.5)));
    }

    #[test]
    fn two_path_pooling() {
        let area =
            pool_area(&[stub("P1", [6.8, 47.0, 5.0], [0.4; 3]), stub("P2", [5.4, 47.2, 5.5], [0.4; 3])]).unwrap();
        assert_abs_diff_eq!(area.d2s.pooled_u, (0.49f64 + 0.16).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(area.d2s.pooled_u, 0.806, epsilon = 5e-4);
        assert!(area.few_paths());
    }

    #[test]
    fn identical_paths_keep_within_u() {
        let p = stub("P", [6.0, 47.0, 5.0], [0.4, 0.5, 0.9]);
        let area = pool_area(&[p.clone(), PathResult { path_id: "Q".into(), ..p }]).unwrap();
        assert_abs_diff_eq!(area.d2s.pooled_u, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(area.rc.pooled_u, 0.9, epsilon = 1e-12);
        assert!(area.d2s.unique && area.lpas4m.unique && area.rc.unique);
    }

    #[test]
    fn insufficient_paths_and_mixed_k() {
        assert_eq!(pool_area(&[stub("P", [6.0, 47.0, 5.0], [0.4; 3])]), Err(Error::InsufficientPaths { got: 1 }));
        let mut other = stub("Q", [6.0, 47.0, 5.0], [0.4; 3]);
        other.coverage_k = 3.0;
        assert!(pool_area(&[stub("P", [6.0, 47.0, 5.0], [0.4; 3]), other]).is_err());
    }

    #[test]
    fn verdict_flags_d2s_only() {
        let area =
            pool_area(&[stub("P1", [6.8, 47.0, 5.0], [0.35, 0.3, 0.5]), stub("P2", [5.4, 47.3, 5.4], [0.3, 0.3, 0.5])])
                .unwrap();
        let report = unicity_report(&area);
        assert!(!report.verdicts[0].unique);
        assert_eq!(report.verdicts[0].disjoint_pairs, vec![("P1".to_string(), "P2".to_string())]);
        assert!(report.verdicts[1].unique && report.verdicts[2].unique);
        assert!(area.d2s.overlap.iter().enumerate().all(|(i, row)| row[i]));
        let text = report.to_string();
        assert!(text.contains("D2S") && text.contains("questionable") && text.contains("P1/P2"));
    }

    #[test]
    fn rounding_up() {
        assert_eq!(round_up_tenth(0.185), 0.2);
        assert_eq!(round_up_tenth(0.4), 0.4);
        assert_eq!(round_up_tenth(0.41), 0.5);
        assert_eq!(round_up_tenth(0.30000000000000004), 0.3);
    }

    fn path_strategy() -> impl Strategy<Value = PathResult> {
        (3.0f64..8.0, 40.0f64..52.0, 2.0f64..15.0, 0.1f64..1.0, 0.1f64..1.0, 0.1f64..2.0)
            .prop_map(|(d, l, r, ud, ul, ur)| stub("P", [d, l, r], [ud, ul, ur]))
    }

    proptest! {
        #[test]
        fn pooled_u_lower_bounds(paths in prop::collection::vec(path_strategy(), 2..6)) {
            let area = pool_area(&paths).unwrap();
            for kind in SnqKind::ALL {
                let p = area.pooling(kind);
                prop_assert!(p.pooled_u + 1e-12 >= p.mean_within_variance.sqrt());
                prop_assert!(p.pooled_u + 1e-12 >= p.between_path_variance.sqrt());
            }
        }

        #[test]
        fn overlap_symmetric_reflexive(a in (0.0f64..10.0, 0.0f64..2.0), b in (0.0f64..10.0, 0.0f64..2.0)) {
            let (a, b) = (Interval::new(a.0, a.1), Interval::new(b.0, b.1));
            prop_assert_eq!(overlap_test(a, b), overlap_test(b, a));
            prop_assert!(overlap_test(a, a));
        }

        #[test]
        fn duplicates_never_break_unicity(paths in prop::collection::vec(path_strategy(), 2..5), pick in 0usize..5) {
            let before = pool_area(&paths).unwrap();
            let mut more = paths.clone();
            more.push(paths[pick % paths.len()].clone());
            let after = pool_area(&more).unwrap();
            for kind in SnqKind::ALL {
                if before.pooling(kind).unique {
                    prop_assert!(after.pooling(kind).unique);
                }
            }
        }
    }
}
