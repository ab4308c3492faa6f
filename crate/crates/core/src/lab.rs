//! Finite-pool versus limit comparisons and parameter sweeps of the limit.

use std::time::Instant;

use thiserror::Error;

use crate::limit::{
    homogeneous_f_dot, solve_homogeneous_f, solve_limit, LimitError, LimitSolution, SolverConfig,
};
use crate::model::{
    validate_measure, DiscreteTypeMeasure, FirmType, ModelError, SystematicFactorConfig, TimeGrid,
    Trajectory, DEFAULT_CAP,
};
use crate::sim::{run_replications, Assignment, SimConfig, SimError};
use crate::stats::Summary;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// `sup_k |L_k - F_k|` over the shared grid.
pub fn sup_distance_to_limit(l: &Trajectory, f: &Trajectory) -> f64 {
    l.sup_distance(f)
}

/// Input of [`lln_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct LlnExperiment {
    pub measure: DiscreteTypeMeasure,
    pub factor: SystematicFactorConfig,
    pub grid: TimeGrid,
    pub n_values: Vec<usize>,
    pub n_reps: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub assignment: Assignment,
}

impl LlnExperiment {
    pub fn new(
        measure: DiscreteTypeMeasure,
        grid: TimeGrid,
        n_values: Vec<usize>,
        n_reps: usize,
        seed: u64,
    ) -> Self {
        Self {
            measure,
            factor: SystematicFactorConfig::default(),
            grid,
            n_values,
            n_reps,
            seed,
            solver: SolverConfig::default(),
            assignment: Assignment::Proportional,
        }
    }
}

/// Distance statistics of one portfolio size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCell {
    pub n_firms: usize,
    pub reps: usize,
    pub seed: u64,
    /// `sup_t |L^N_t - F(t)|`, one per replication.
    pub distances: Vec<f64>,
    pub summary: Summary,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub cells: Vec<ConvergenceCell>,
    pub grid: TimeGrid,
    pub limit_iterations: usize,
    pub limit_residual: f64,
    /// `dt * sup F'`: bound on the gap between the grid sup and the continuous sup.
    pub grid_sup_gap: f64,
    /// Indices `i` with `median[i] > median[i - 1]`.
    pub median_increases: Vec<usize>,
    pub limit: LimitSolution,
}

/// Seed of the cell for portfolio size `n`, so sizes use unrelated streams.
pub fn cell_seed(seed: u64, n_firms: usize) -> u64 {
    splitmix64(seed ^ splitmix64(n_firms as u64))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulates `n_reps` pools at each size and measures their sup distance to `F`.
pub fn lln_experiment(exp: &LlnExperiment) -> Result<ConvergenceReport, LabError> {
    if exp.n_values.is_empty() || exp.n_values.contains(&0) {
        return Err(LabError::Invalid(
            "n_values must be non-empty and >= 1".into(),
        ));
    }
    if exp.n_reps < 2 {
        return Err(LabError::Invalid(
            "at least 2 replications per size are required".into(),
        ));
    }
    let limit = solve_limit(&exp.measure, &exp.grid, &exp.solver)?;
    let profile = limit.intensity_profile()?;
    let sup_f_dot = profile.f_dot.iter().copied().fold(0.0, f64::max);

    let mut cells = Vec::with_capacity(exp.n_values.len());
    for &n in &exp.n_values {
        let start = Instant::now();
        let seed = cell_seed(exp.seed, n);
        let config = SimConfig {
            n_firms: n,
            measure: exp.measure.clone(),
            factor: exp.factor,
            grid: exp.grid,
            seed,
            assignment: exp.assignment,
            record_moments: Vec::new(),
        };
        let reps = run_replications(&config, exp.n_reps)?;
        let distances: Vec<f64> = reps
            .results
            .iter()
            .map(|r| sup_distance_to_limit(&r.l_path, &limit.f))
            .collect();
        cells.push(ConvergenceCell {
            n_firms: n,
            reps: exp.n_reps,
            seed,
            summary: Summary::of(&distances),
            distances,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let median_increases = (1..cells.len())
        .filter(|&i| cells[i].summary.median > cells[i - 1].summary.median)
        .collect();
    Ok(ConvergenceReport {
        cells,
        grid: exp.grid,
        limit_iterations: limit.iterations,
        limit_residual: limit.residual,
        grid_sup_gap: exp.grid.dt() * sup_f_dot,
        median_increases,
        limit,
    })
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweptField {
    Alpha,
    LambdaBar,
    Sigma,
    BetaC,
    BetaS,
    LambdaInit,
}

impl SweptField {
    pub fn name(&self) -> &'static str {
        match self {
            SweptField::Alpha => "alpha",
            SweptField::LambdaBar => "lambda_bar",
            SweptField::Sigma => "sigma",
            SweptField::BetaC => "beta_c",
            SweptField::BetaS => "beta_s",
            SweptField::LambdaInit => "lambda_init",
        }
    }

    fn apply(&self, base: FirmType, lambda_init: f64, value: f64) -> (FirmType, f64) {
        let mut p = base;
        let mut l0 = lambda_init;
        match self {
            SweptField::Alpha => p.alpha = value,
            SweptField::LambdaBar => p.lambda_bar = value,
            SweptField::Sigma => p.sigma = value,
            SweptField::BetaC => p.beta_c = value,
            SweptField::BetaS => p.beta_s = value,
            SweptField::LambdaInit => l0 = value,
        }
        (p, l0)
    }
}

/// One-parameter family of homogeneous portfolios.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: FirmType,
    pub lambda_init: f64,
    pub field: SweptField,
    pub values: Vec<f64>,
    pub grid: TimeGrid,
    pub solver: SolverConfig,
}

fn fig_base(alpha: f64, lambda_bar: f64, beta_c: f64) -> FirmType {
    FirmType::new(alpha, lambda_bar, 0.9, beta_c, 0.0)
}

impl SweepSpec {
    fn preset(base: FirmType, field: SweptField, values: &[f64], grid: TimeGrid) -> Self {
        Self {
            base,
            lambda_init: 0.5,
            field,
            values: values.to_vec(),
            grid,
            solver: SolverConfig::default(),
        }
    }

    /// Contagion sensitivity family: σ = 0.9, α = 4, λ̄ = 0.5, λ0 = 0.5.
    pub fn contagion_family(grid: TimeGrid) -> Self {
        Self::preset(
            fig_base(4.0, 0.5, 0.0),
            SweptField::BetaC,
            &[0.0, 1.0, 2.0, 4.0],
            grid,
        )
    }

    /// Reversion speed family: σ = 0.9, β^C = 2, λ̄ = 0.5, λ0 = 0.5.
    pub fn reversion_speed_family(grid: TimeGrid) -> Self {
        Self::preset(
            fig_base(4.0, 0.5, 2.0),
            SweptField::Alpha,
            &[2.0, 4.0, 8.0],
            grid,
        )
    }

    /// Reversion level family: σ = 0.9, β^C = 2, α = 4, λ0 = 0.5.
    pub fn reversion_level_family(grid: TimeGrid) -> Self {
        Self::preset(
            fig_base(4.0, 0.5, 2.0),
            SweptField::LambdaBar,
            &[0.25, 0.5, 1.0],
            grid,
        )
    }

    pub fn measures(&self) -> Result<Vec<DiscreteTypeMeasure>, LabError> {
        self.values
            .iter()
            .map(|&v| {
                let (p, l0) = self.field.apply(self.base, self.lambda_init, v);
                Ok(validate_measure(
                    DiscreteTypeMeasure::homogeneous(p, l0),
                    DEFAULT_CAP,
                )?)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub solution: LimitSolution,
}

/// One limit solve per swept value on the shared grid.
pub fn figure_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, LabError> {
    spec.measures()?
        .into_iter()
        .zip(&spec.values)
        .map(|(m, &value)| {
            Ok(SweepRow {
                value,
                solution: solve_limit(&m, &spec.grid, &spec.solver)?,
            })
        })
        .collect()
}

/// Residuals of the identity `Q(t) = B(μ_t) F'(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QIdentity {
    /// `sup |Q - B F'|` with both moments from the per-atom affine transform.
    pub affine_residual: f64,
    /// Single-type portfolios only: `sup |Q - β^C F'|` with `F'` taken from
    /// the direct integral equation for `F`, independent of the `Q` route.
    pub integral_equation_residual: Option<f64>,
}

pub fn q_identity_diagnostic(limit: &LimitSolution) -> Result<QIdentity, LabError> {
    let profile = limit.intensity_profile()?;
    let q = limit.q.values();
    let mut affine: f64 = 0.0;
    for (k, (&qk, &fd)) in q.iter().zip(&profile.f_dot).enumerate() {
        let b = profile.effective_weight(k)?;
        affine = affine.max((qk - b * fd).abs());
    }
    let integral_equation_residual = if limit.measure.is_homogeneous() {
        let atom = limit.measure.atoms[0];
        let direct = solve_homogeneous_f(
            &atom.firm_type,
            atom.lambda_init,
            limit.grid(),
            &limit.config,
        )?;
        let f_dot = homogeneous_f_dot(&limit.riccati[0], atom.lambda_init, &direct.values)?;
        let beta_c = atom.firm_type.beta_c;
        Some(
            q.iter()
                .zip(&f_dot)
                .map(|(qk, fd)| (qk - beta_c * fd).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(QIdentity {
        affine_residual: affine,
        integral_equation_residual,
    })
}
