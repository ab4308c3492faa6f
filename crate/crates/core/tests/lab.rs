use contagion::lab::{figure_sweep, lln_experiment, LlnExperiment, SweepSpec};
use contagion::model::{DiscreteTypeMeasure, FirmType, TimeGrid};

#[test]
fn constant_intensity_distance_scales_like_inverse_root_n() {
    let m = DiscreteTypeMeasure::homogeneous(FirmType::new(0.0, 0.0, 0.0, 0.0, 0.0), 0.5);
    let exp = LlnExperiment::new(
        m,
        TimeGrid::new(1.0, 500).unwrap(),
        vec![500, 2000, 8000],
        40,
        4,
    );
    let report = lln_experiment(&exp).unwrap();
    let med: Vec<f64> = report.cells.iter().map(|c| c.summary.median).collect();
    for w in med.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=3.0).contains(&ratio), "medians {med:?}");
    }
    assert!(report.median_increases.is_empty());
    assert_eq!(report.limit_iterations, 1);
    for c in &report.cells {
        assert_eq!(c.distances.len(), 40);
        assert!(c.distances.iter().all(|d| (0.0..=1.0).contains(d)));
    }
}

#[test]
fn experiment_is_reproducible() {
    let m = DiscreteTypeMeasure::homogeneous(FirmType::new(4.0, 0.5, 0.9, 2.0, 0.0), 0.5);
    let exp = LlnExperiment::new(m, TimeGrid::new(1.0, 200).unwrap(), vec![50, 200], 4, 9);
    let a = lln_experiment(&exp).unwrap();
    let b = lln_experiment(&exp).unwrap();
    for (x, y) in a.cells.iter().zip(&b.cells) {
        assert_eq!(x.distances, y.distances);
        assert_eq!(x.seed, y.seed);
    }
}

#[test]
fn figure_families_are_ordered() {
    let g = TimeGrid::new(2.0, 1000).unwrap();
    for (spec, increasing) in [
        (SweepSpec::contagion_family(g), true),
        (SweepSpec::reversion_level_family(g), true),
    ] {
        let rows = figure_sweep(&spec).unwrap();
        assert_eq!(rows.len(), spec.values.len());
        for w in rows.windows(2) {
            assert!(w[1].value > w[0].value);
            for (lo, hi) in w[0]
                .solution
                .f
                .values()
                .iter()
                .zip(w[1].solution.f.values())
            {
                assert_eq!(*hi >= *lo, increasing);
            }
        }
    }
    let rows = figure_sweep(&SweepSpec::reversion_speed_family(g)).unwrap();
    let ends: Vec<f64> = rows.iter().map(|r| r.solution.f.last()).collect();
    assert!(
        ends.windows(2).all(|w| w[1] < w[0]),
        "F(T) by alpha: {ends:?}"
    );
}
