//! Reports survive a JSON round trip with every number intact.

use snq_core::analytic::{analytic_budget, DistanceErrorModel, LevelUncertaintyVector, OctaveUncertaintyTable};
use snq_core::area::{pool_area, unicity_report, PathResult};
use snq_core::field::{synth_office, HomogeneousField, OfficeConfigSpec, PathGeometry};
use snq_core::io::{decay_plot_csv, histogram_plot_csv, interval_plot_csv, PathReport, Report};
use snq_core::metrics::{compute_snq, SnqOptions};
use snq_core::monte_carlo::{run_mc, McConfig, McErrorModel};

#[test]
fn full_report_round_trip() {
    let opts = SnqOptions::default();
    let mut report = Report::new("area", opts.threshold_dba, 2.0);
    let mut results = Vec::new();
    for (i, label) in ["211", "312"].iter().enumerate() {
        let spec = OfficeConfigSpec::from_label(label.parse().unwrap());
        let (path, _) = synth_office(&spec, &PathGeometry::default()).unwrap();
        let data = path.decay_data().unwrap();
        let ul = LevelUncertaintyVector::from_path(&path, &OctaveUncertaintyTable::default());
        let budget = analytic_budget(&data, &ul, &DistanceErrorModel::default(), &opts).unwrap();
        let field = HomogeneousField::from_path(&path);
        let cfg = McConfig { batch_size: 2_000, max_batches: 2, seed: i as u64, ..McConfig::default() };
        let mc = run_mc(&field, &path, &McErrorModel::default(), &cfg, &opts).unwrap().without_samples();
        results.push(PathResult::analytic(format!("P{i}"), budget, 2.0));
        report.paths.push(PathReport {
            path_id: format!("P{i}"),
            distances_m: data.distances_m.clone(),
            levels_dba: data.levels_dba.clone(),
            fit: compute_snq(&path, &opts).unwrap(),
            budget: Some(budget),
            mc: Some(mc),
        });
    }
    let area = pool_area(&results).unwrap();
    report.unicity = Some(unicity_report(&area));
    report.area = Some(area);

    let back = Report::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);

    assert_eq!(interval_plot_csv(&report).lines().count(), 1 + 2 * 3 * 2 + 3);
    assert_eq!(histogram_plot_csv(&report).lines().count(), 1 + 2 * 3 * 40);
    assert!(decay_plot_csv(&report).lines().skip(1).all(|l| l.starts_with("P0,") || l.starts_with("P1,")));
}
