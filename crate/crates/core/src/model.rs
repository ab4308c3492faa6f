//! Firm types, heterogeneity measures, and time grids.
//!
//! A portfolio is described by a discrete joint law on (firm type, initial
//! intensity). Both the finite-N simulator and the limit solver consume the
//! same [`DiscreteTypeMeasure`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default bound applied to every type parameter and initial intensity.
pub const DEFAULT_CAP: f64 = 100.0;

/// Mass tolerance for a measure to count as a probability measure.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Dynamics of one class of firms.
///
/// The intensity follows a square-root diffusion reverting at speed `alpha`
/// to `lambda_bar` with volatility `sigma`; `beta_c` is the jump received per
/// unit of default fraction and `beta_s` the exposure to the systematic
/// factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmType {
    pub alpha: f64,
    pub lambda_bar: f64,
    pub sigma: f64,
    pub beta_c: f64,
    #[serde(default)]
    pub beta_s: f64,
}

impl FirmType {
    pub fn new(alpha: f64, lambda_bar: f64, sigma: f64, beta_c: f64, beta_s: f64) -> Self {
        Self {
            alpha,
            lambda_bar,
            sigma,
            beta_c,
            beta_s,
        }
    }

    /// `alpha * lambda_bar`, the constant forcing of the intensity drift.
    pub fn drift_level(&self) -> f64 {
        self.alpha * self.lambda_bar
    }

    fn check(&self, atom: usize, cap: f64, out: &mut Vec<Violation>) {
        let nonneg = [
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("sigma", self.sigma),
            ("beta_c", self.beta_c),
        ];
        for (field, value) in nonneg {
            check_nonneg(atom, field, value, cap, out);
        }
        if !self.beta_s.is_finite() {
            out.push(Violation::new(
                atom,
                "beta_s",
                self.beta_s,
                ViolationKind::NonFinite,
            ));
        } else if self.beta_s.abs() > cap {
            out.push(Violation::new(
                atom,
                "beta_s",
                self.beta_s,
                ViolationKind::CapExceeded,
            ));
        }
    }
}

fn check_nonneg(atom: usize, field: &'static str, value: f64, cap: f64, out: &mut Vec<Violation>) {
    if !value.is_finite() {
        out.push(Violation::new(atom, field, value, ViolationKind::NonFinite));
    } else if value < 0.0 {
        out.push(Violation::new(
            atom,
            field,
            value,
            ViolationKind::NegativeParameter,
        ));
    } else if value > cap {
        out.push(Violation::new(
            atom,
            field,
            value,
            ViolationKind::CapExceeded,
        ));
    }
}

/// One atom of the joint (type, initial intensity) law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeAtom {
    #[serde(flatten)]
    pub firm_type: FirmType,
    pub lambda_init: f64,
    pub weight: f64,
}

/// Weighted atoms on type × initial intensity, in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTypeMeasure {
    pub atoms: Vec<TypeAtom>,
}

impl DiscreteTypeMeasure {
    /// Builds a measure without validating it. See [`validate_measure`].
    pub fn new(atoms: Vec<TypeAtom>) -> Self {
        Self { atoms }
    }

    /// Single-atom portfolio: every firm shares `firm_type` and `lambda_init`.
    pub fn homogeneous(firm_type: FirmType, lambda_init: f64) -> Self {
        Self {
            atoms: vec![TypeAtom {
                firm_type,
                lambda_init,
                weight: 1.0,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// True when all atoms share the same type and initial intensity.
    pub fn is_homogeneous(&self) -> bool {
        match self.atoms.split_first() {
            Some((first, rest)) => rest
                .iter()
                .all(|a| a.firm_type == first.firm_type && a.lambda_init == first.lambda_init),
            None => false,
        }
    }

    pub fn max_beta_c(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.firm_type.beta_c)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NegativeParameter,
    NonFinite,
    CapExceeded,
    ZeroWeight,
    WeightSumMismatch,
    EmptyMeasure,
}

impl ViolationKind {
    pub fn code(&self) -> &'static str {
        match self {
            ViolationKind::NegativeParameter => "NEGATIVE_PARAMETER",
            ViolationKind::NonFinite => "NONFINITE_PARAMETER",
            ViolationKind::CapExceeded => "CAP_EXCEEDED",
            ViolationKind::ZeroWeight => "NONPOSITIVE_WEIGHT",
            ViolationKind::WeightSumMismatch => "WEIGHT_SUM_MISMATCH",
            ViolationKind::EmptyMeasure => "EMPTY_MEASURE",
        }
    }
}

/// A single failed check. `atom` is `None` for measure-wide checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub atom: Option<usize>,
    pub field: &'static str,
    pub value: f64,
    pub kind: ViolationKind,
}

impl Violation {
    fn new(atom: usize, field: &'static str, value: f64, kind: ViolationKind) -> Self {
        Self {
            atom: Some(atom),
            field,
            value,
            kind,
        }
    }

    fn global(field: &'static str, value: f64, kind: ViolationKind) -> Self {
        Self {
            atom: None,
            field,
            value,
            kind,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.atom {
            Some(i) => write!(
                f,
                "{}: atom {} {} = {}",
                self.kind.code(),
                i,
                self.field,
                self.value
            ),
            None => write!(f, "{}: {} = {}", self.kind.code(), self.field, self.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid measure: {}", join(.0))]
    InvalidMeasure(Vec<Violation>),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid factor configuration: {0}")]
    InvalidFactor(String),
}

impl ModelError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::InvalidMeasure(v) => v,
            _ => &[],
        }
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations().iter().any(|v| v.kind == kind)
    }
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks bounds, signs, and normalization of every atom.
///
/// Returns the measure unchanged on success; on failure every violation is
/// reported, not just the first.
pub fn validate_measure(
    measure: DiscreteTypeMeasure,
    cap: f64,
) -> Result<DiscreteTypeMeasure, ModelError> {
    let mut violations = Vec::new();
    if measure.atoms.is_empty() {
        violations.push(Violation::global("atoms", 0.0, ViolationKind::EmptyMeasure));
    }
    for (i, atom) in measure.atoms.iter().enumerate() {
        atom.firm_type.check(i, cap, &mut violations);
        check_nonneg(i, "lambda_init", atom.lambda_init, cap, &mut violations);
        if !atom.weight.is_finite() {
            violations.push(Violation::new(
                i,
                "weight",
                atom.weight,
                ViolationKind::NonFinite,
            ));
        } else if atom.weight <= 0.0 {
            violations.push(Violation::new(
                i,
                "weight",
                atom.weight,
                ViolationKind::ZeroWeight,
            ));
        }
    }
    if !measure.atoms.is_empty() {
        let mass = measure.total_mass();
        if mass.is_nan() || (mass - 1.0).abs() > WEIGHT_TOLERANCE {
            violations.push(Violation::global(
                "total_weight",
                mass,
                ViolationKind::WeightSumMismatch,
            ));
        }
    }
    if violations.is_empty() {
        Ok(measure)
    } else {
        Err(ModelError::InvalidMeasure(violations))
    }
}

fn check_factor_mass(
    field: &'static str,
    weights: impl Iterator<Item = f64>,
) -> Result<(), ModelError> {
    let mass: f64 = weights.sum();
    if (mass - 1.0).abs() <= WEIGHT_TOLERANCE {
        Ok(())
    } else {
        Err(ModelError::InvalidMeasure(vec![Violation::global(
            field,
            mass,
            ViolationKind::WeightSumMismatch,
        )]))
    }
}

/// Product of a type law and an initial-intensity law, type-major order.
pub fn product_measure(
    types: &[(FirmType, f64)],
    inits: &[(f64, f64)],
) -> Result<DiscreteTypeMeasure, ModelError> {
    check_factor_mass("type_weights", types.iter().map(|t| t.1))?;
    check_factor_mass("init_weights", inits.iter().map(|i| i.1))?;
    let atoms = types
        .iter()
        .flat_map(|&(firm_type, wt)| {
            inits.iter().map(move |&(lambda_init, wi)| TypeAtom {
                firm_type,
                lambda_init,
                weight: wt * wi,
            })
        })
        .collect();
    Ok(DiscreteTypeMeasure { atoms })
}

/// Rule giving the systematic-factor scale as a function of portfolio size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsSchedule {
    /// `N^(-1/2)`
    InvSqrt,
    Fixed(f64),
    Zero,
}

impl EpsSchedule {
    pub fn eps(&self, n_firms: usize) -> f64 {
        match *self {
            EpsSchedule::InvSqrt => 1.0 / (n_firms.max(1) as f64).sqrt(),
            EpsSchedule::Fixed(e) => e,
            EpsSchedule::Zero => 0.0,
        }
    }
}

/// Ornstein-Uhlenbeck systematic factor `dX = -gamma X dt + dV`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystematicFactorConfig {
    pub gamma: f64,
    pub x_init: f64,
    pub eps_schedule: EpsSchedule,
}

impl Default for SystematicFactorConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            x_init: 0.0,
            eps_schedule: EpsSchedule::InvSqrt,
        }
    }
}

impl SystematicFactorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(ModelError::InvalidFactor(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !self.x_init.is_finite() {
            return Err(ModelError::InvalidFactor(format!(
                "x_init must be finite, got {}",
                self.x_init
            )));
        }
        if let EpsSchedule::Fixed(e) = self.eps_schedule {
            if !(e.is_finite() && e >= 0.0) {
                return Err(ModelError::InvalidFactor(format!(
                    "fixed eps must be >= 0, got {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform grid `t_k = k * dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    t_end: f64,
    n_steps: usize,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = ModelError;
    fn try_from(raw: RawGrid) -> Result<Self, Self::Error> {
        TimeGrid::new(raw.t_end, raw.n_steps)
    }
}

impl From<TimeGrid> for RawGrid {
    fn from(g: TimeGrid) -> Self {
        RawGrid {
            t_end: g.t_end,
            n_steps: g.n_steps,
        }
    }
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self, ModelError> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(ModelError::InvalidGrid(format!(
                "t_end must be > 0, got {t_end}"
            )));
        }
        if n_steps == 0 {
            return Err(ModelError::InvalidGrid("n_steps must be >= 1".into()));
        }
        Ok(Self {
            t_end,
            n_steps,
            dt: t_end / n_steps as f64,
        })
    }

    /// Grid on `[0, t_end]` whose step is `dt` (rounded to the nearest count).
    pub fn with_step(t_end: f64, dt: f64) -> Result<Self, ModelError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ModelError::InvalidGrid(format!("dt must be > 0, got {dt}")));
        }
        Self::new(t_end, ((t_end / dt).round() as usize).max(1))
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points()).map(move |k| self.time(k))
    }

    /// Same horizon, half the step.
    pub fn refined(&self) -> Self {
        Self::new(self.t_end, self.n_steps * 2).expect("refining a valid grid")
    }
}

/// A real function sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != grid.n_points() {
            return Err(ModelError::InvalidGrid(format!(
                "trajectory has {} values for {} grid points",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidGrid(format!(
                "non-finite value at grid index {k}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("trajectory is never empty")
    }

    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        sup_distance(&self.values, &other.values)
    }

    /// Nearest-sample lookup; `t` outside the grid is clamped.
    pub fn at_time(&self, t: f64) -> f64 {
        let k = (t / self.grid.dt())
            .round()
            .clamp(0.0, self.grid.n_steps() as f64) as usize;
        self.values[k]
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sup distance of unequal-length samples");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_type() -> FirmType {
        FirmType::new(4.0, 0.5, 0.9, 2.0, 0.0)
    }

    #[test]
    fn fig_single_atom_is_valid() {
        let m = DiscreteTypeMeasure::homogeneous(base_type(), 0.5);
        assert_eq!(validate_measure(m.clone(), 10.0).unwrap(), m);
    }

    #[test]
    fn weight_sum_checked() {
        let atom = |w| TypeAtom {
            firm_type: base_type(),
            lambda_init: 0.5,
            weight: w,
        };
        let ok = DiscreteTypeMeasure::new(vec![atom(0.5), atom(0.5)]);
        assert!(validate_measure(ok, DEFAULT_CAP).is_ok());
        let bad = DiscreteTypeMeasure::new(vec![atom(0.5), atom(0.6)]);
        let err = validate_measure(bad, DEFAULT_CAP).unwrap_err();
        assert!(err.has(ViolationKind::WeightSumMismatch));
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut t = base_type();
        t.sigma = -0.1;
        let err =
            validate_measure(DiscreteTypeMeasure::homogeneous(t, 0.5), DEFAULT_CAP).unwrap_err();
        assert_eq!(err.violations().len(), 1);
        assert_eq!(err.violations()[0].kind, ViolationKind::NegativeParameter);
        assert_eq!(err.violations()[0].field, "sigma");
    }

    #[test]
    fn all_violations_reported() {
        let t = FirmType::new(-1.0, 200.0, 0.5, 1.0, -300.0);
        let m = DiscreteTypeMeasure::new(vec![TypeAtom {
            firm_type: t,
            lambda_init: f64::NAN,
            weight: 0.3,
        }]);
        let err = validate_measure(m, DEFAULT_CAP).unwrap_err();
        for kind in [
            ViolationKind::NegativeParameter,
            ViolationKind::CapExceeded,
            ViolationKind::NonFinite,
            ViolationKind::WeightSumMismatch,
        ] {
            assert!(err.has(kind), "missing {kind:?} in {err}");
        }
        assert_eq!(err.violations().len(), 5);
    }

    #[test]
    fn empty_measure_rejected() {
        let err = validate_measure(DiscreteTypeMeasure::new(vec![]), DEFAULT_CAP).unwrap_err();
        assert!(err.has(ViolationKind::EmptyMeasure));
    }

    #[test]
    fn beta_s_may_be_negative_within_cap() {
        let t = FirmType::new(1.0, 0.1, 0.2, 0.0, -5.0);
        assert!(validate_measure(DiscreteTypeMeasure::homogeneous(t, 0.1), 10.0).is_ok());
        let t = FirmType::new(1.0, 0.1, 0.2, 0.0, -11.0);
        assert!(
            validate_measure(DiscreteTypeMeasure::homogeneous(t, 0.1), 10.0)
                .unwrap_err()
                .has(ViolationKind::CapExceeded)
        );
    }

    #[test]
    fn singleton_product() {
        let m = product_measure(&[(base_type(), 1.0)], &[(0.5, 1.0)]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.atoms[0].weight, 1.0);
    }

    #[test]
    fn product_weights_type_major() {
        let a = base_type();
        let b = FirmType::new(2.0, 0.25, 0.5, 1.0, 0.0);
        let m = product_measure(&[(a, 0.3), (b, 0.7)], &[(0.1, 0.5), (0.9, 0.5)]).unwrap();
        let w: Vec<f64> = m.atoms.iter().map(|x| x.weight).collect();
        assert_eq!(w, vec![0.15, 0.15, 0.35, 0.35]);
        assert_eq!(m.atoms[1].firm_type, a);
        assert_eq!(m.atoms[1].lambda_init, 0.9);
        assert_eq!(m.atoms[2].firm_type, b);
        assert!(validate_measure(m, DEFAULT_CAP).is_ok());
    }

    #[test]
    fn product_rejects_unnormalized_factor() {
        let err = product_measure(&[(base_type(), 0.9)], &[(0.5, 1.0)]).unwrap_err();
        assert!(err.has(ViolationKind::WeightSumMismatch));
        let err = product_measure(&[(base_type(), 1.0)], &[(0.5, 0.5), (0.2, 0.6)]).unwrap_err();
        assert!(err.has(ViolationKind::WeightSumMismatch));
    }

    #[test]
    fn grid_points() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(
            g.times().collect::<Vec<_>>(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert_eq!(TimeGrid::with_step(1.0, 1e-3).unwrap().n_steps(), 1000);
    }

    #[test]
    fn trajectory_shape_checked() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        assert!(Trajectory::new(g, vec![0.0, 1.0]).is_err());
        assert!(Trajectory::new(g, vec![0.0, f64::INFINITY, 1.0]).is_err());
        assert!(Trajectory::new(g, vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn eps_schedules() {
        assert_eq!(EpsSchedule::InvSqrt.eps(100), 0.1);
        assert!(EpsSchedule::InvSqrt.eps(400) <= EpsSchedule::InvSqrt.eps(100));
        assert_eq!(EpsSchedule::Zero.eps(7), 0.0);
        assert_eq!(EpsSchedule::Fixed(0.3).eps(7), 0.3);
        let mut f = SystematicFactorConfig::default();
        assert!(f.validate().is_ok());
        f.gamma = 0.0;
        assert!(f.validate().is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn firm_type() -> impl Strategy<Value = FirmType> {
        (0.0..10.0, 0.0..10.0, 0.0..10.0, 0.0..10.0, -10.0..10.0f64)
            .prop_map(|(a, l, s, c, x)| FirmType::new(a, l, s, c, x))
    }

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01..1.0f64, n).prop_map(|w| {
            let s: f64 = w.iter().sum();
            let mut w: Vec<f64> = w.iter().map(|x| x / s).collect();
            // pin the mass onto the last entry so the sum is 1 to round-off
            let head: f64 = w[..w.len() - 1].iter().sum();
            *w.last_mut().unwrap() = 1.0 - head;
            w
        })
    }

    proptest! {
        #[test]
        fn product_of_valid_factors_is_valid(
            (types, tw) in prop::collection::vec(firm_type(), 1..5)
                .prop_flat_map(|t| { let n = t.len(); (Just(t), weights(n)) }),
            (inits, iw) in prop::collection::vec(0.0..10.0f64, 1..5)
                .prop_flat_map(|l| { let n = l.len(); (Just(l), weights(n)) }),
        ) {
            let tf: Vec<(FirmType, f64)> = types.iter().copied().zip(tw).collect();
            let inf: Vec<(f64, f64)> = inits.iter().copied().zip(iw).collect();
            let m = product_measure(&tf, &inf).unwrap();
            prop_assert_eq!(m.len(), types.len() * inits.len());
            prop_assert!((m.total_mass() - 1.0).abs() <= WEIGHT_TOLERANCE);
            let m = validate_measure(m, 10.0).unwrap();
            for a in &m.atoms {
                prop_assert!(a.lambda_init >= 0.0 && a.lambda_init <= 10.0);
                prop_assert!(a.firm_type.beta_s.abs() <= 10.0);
            }
        }
    }
}
