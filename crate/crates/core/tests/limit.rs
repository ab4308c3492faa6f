use contagion::limit::{
    effective_contagion_weight, solve_limit, solve_riccati, LimitError, RiccatiMethod, SolverConfig,
};
use contagion::model::{DiscreteTypeMeasure, FirmType, TimeGrid, TypeAtom};
use proptest::prelude::*;

fn grid(t: f64, n: usize) -> TimeGrid {
    TimeGrid::new(t, n).unwrap()
}

fn solve(p: FirmType, l0: f64, g: &TimeGrid) -> contagion::limit::LimitSolution {
    solve_limit(
        &DiscreteTypeMeasure::homogeneous(p, l0),
        g,
        &SolverConfig::default(),
    )
    .unwrap()
}

/// With alpha = sigma = 0 the intensity is `l0 + beta_c F`, so
/// `F' = (1 - F)(l0 + beta_c F)`.
fn pure_contagion(l0: f64, c: f64, t: f64) -> f64 {
    let e = ((l0 + c) * t).exp_m1();
    l0 * e / (l0 + c + l0 * e)
}

#[test]
fn pure_contagion_matches_logistic_solution() {
    let g = grid(2.0, 2000);
    for (l0, c) in [(0.5, 0.0), (0.5, 2.0), (0.2, 4.0)] {
        let s = solve(FirmType::new(0.0, 0.0, 0.0, c, 0.0), l0, &g);
        for (k, t) in g.times().enumerate() {
            let exact = pure_contagion(l0, c, t);
            assert!(
                (s.f.values()[k] - exact).abs() < 2e-6,
                "l0={l0} c={c} t={t}"
            );
        }
    }
}

#[test]
fn constant_intensity_is_exponential() {
    let g = grid(1.0, 500);
    let s = solve(FirmType::new(0.0, 0.0, 0.0, 0.0, 0.0), 0.5, &g);
    for (k, t) in g.times().enumerate() {
        assert!((s.f.values()[k] + (-0.5 * t).exp_m1()).abs() < 1e-14);
    }
    assert!(s.q.values().iter().all(|&q| q == 0.0));
}

#[test]
fn contagion_weight_at_origin_is_intensity_weighted() {
    let atom = |beta_c: f64, l0: f64, weight: f64| TypeAtom {
        firm_type: FirmType::new(4.0, 0.5, 0.9, beta_c, 0.0),
        lambda_init: l0,
        weight,
    };
    let m = DiscreteTypeMeasure::new(vec![atom(1.0, 0.2, 0.5), atom(3.0, 0.6, 0.5)]);
    let s = solve_limit(&m, &grid(1.0, 1000), &SolverConfig::default()).unwrap();
    let expected = (1.0 * 0.2 + 3.0 * 0.6) / (0.2 + 0.6);
    assert!((s.effective_contagion_weight(0).unwrap() - expected).abs() < 1e-14);
    assert!((s.q.values()[0] - expected * 0.5 * 0.8).abs() < 1e-12);
    for k in (0..=1000).step_by(100) {
        let b = s.effective_contagion_weight(k).unwrap();
        assert!((1.0..=3.0).contains(&b), "B = {b} at k = {k}");
    }
    let same = DiscreteTypeMeasure::new(vec![atom(1.0, 0.2, 0.5), atom(1.0, 0.6, 0.5)]);
    let s = solve_limit(&same, &grid(1.0, 200), &SolverConfig::default()).unwrap();
    assert!((s.effective_contagion_weight(0).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn zero_intensity_mass_is_degenerate() {
    let p = FirmType::new(0.0, 0.0, 0.0, 1.0, 0.0);
    let m = DiscreteTypeMeasure::homogeneous(p, 0.0);
    let g = grid(1.0, 100);
    let r = vec![solve_riccati(&p, &g, RiccatiMethod::ClosedForm).unwrap()];
    let q = contagion::model::Trajectory::zeros(g);
    let err = effective_contagion_weight(&m, &r, &q, 3).unwrap_err();
    assert!(matches!(
        err,
        LimitError::DegenerateMeasure { index: 3, .. }
    ));
}

#[test]
fn rk4_route_gives_same_limit() {
    let g = grid(1.0, 1000);
    let m = DiscreteTypeMeasure::homogeneous(FirmType::new(4.0, 0.5, 0.9, 2.0, 0.0), 0.5);
    let closed = solve_limit(&m, &g, &SolverConfig::default()).unwrap();
    let cfg = SolverConfig {
        riccati: RiccatiMethod::Rk4,
        ..SolverConfig::default()
    };
    let rk = solve_limit(&m, &g, &cfg).unwrap();
    assert!(closed.f.sup_distance(&rk.f) < 1e-10);
}

fn firm_type() -> impl Strategy<Value = (FirmType, f64)> {
    (
        0.0..8.0f64,
        0.0..1.5f64,
        0.0..2.0f64,
        0.0..4.0f64,
        0.0..1.5f64,
    )
        .prop_map(|(a, l, s, c, l0)| (FirmType::new(a, l, s, c, 0.0), l0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn default_rate_is_a_distribution_function((p, l0) in firm_type()) {
        let s = solve(p, l0, &grid(1.0, 400));
        let f = s.f.values();
        prop_assert_eq!(f[0], 0.0);
        prop_assert!(f.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(f.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        prop_assert!(s.q.values().iter().all(|&q| q >= 0.0));
    }

    #[test]
    fn more_contagion_more_defaults((p, l0) in firm_type(), extra in 0.1..3.0f64) {
        let g = grid(1.0, 400);
        let lo = solve(p, l0, &g);
        let hi = solve(FirmType { beta_c: p.beta_c + extra, ..p }, l0, &g);
        for (a, b) in lo.f.values().iter().zip(hi.f.values()) {
            prop_assert!(*b >= *a - 1e-12);
        }
    }

    #[test]
    fn higher_level_more_defaults((p, l0) in firm_type(), extra in 0.1..1.0f64) {
        let g = grid(1.0, 400);
        let lo = solve(p, l0, &g);
        let hi = solve(FirmType { lambda_bar: p.lambda_bar + extra, ..p }, l0, &g);
        for (a, b) in lo.f.values().iter().zip(hi.f.values()) {
            prop_assert!(*b >= *a - 1e-12);
        }
    }
}
