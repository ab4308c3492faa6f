//! Large-portfolio limit of the default rate.
//!
//! The limit is built in three stages: the per-type Riccati coefficient `b`,
//! the contagion forcing `Q` as the fixed point of a Volterra-type map, and
//! the default rate `F` through the exponential-affine survival transform.
//! A direct fixed point on `F` for single-type portfolios is kept as an
//! independent cross-check.

mod picard;
pub mod quadrature;
pub mod riccati;
mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DiscreteTypeMeasure, ModelError, TimeGrid, Trajectory};

pub use picard::{solve_homogeneous_f, solve_q, FixedPoint};
pub use riccati::{solve_riccati, steady_state, RiccatiMethod, RiccatiSolution};
pub use transform::{
    compute_f, effective_contagion_weight, homogeneous_f_dot, intensity_profile, IntensityProfile,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitError {
    #[error("NO_CONVERGENCE: residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("NONFINITE_RESULT: {what} at grid index {index}")]
    NonFiniteResult { what: &'static str, index: usize },
    #[error("NONFINITE_RESULT: Q = {value:e} at grid index {index} is materially negative")]
    NegativeQ { index: usize, value: f64 },
    #[error("DEGENERATE_MEASURE: intensity mass {mass:e} at grid index {index}")]
    DegenerateMeasure { index: usize, mass: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Picard iteration and Riccati options shared by every limit solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Sup-norm bound on the last Picard update.
    pub tol: f64,
    pub max_iter: usize,
    /// Under-relaxation weight in `(0, 1]`; `1` is plain Picard.
    pub relaxation: f64,
    pub riccati: RiccatiMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            relaxation: 1.0,
            riccati: RiccatiMethod::ClosedForm,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidGrid(m));
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("solver tol must be > 0, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("solver max_iter must be >= 1".into());
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            ));
        }
        Ok(())
    }
}

/// Everything the limit pipeline produces for one measure and grid.
#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub measure: DiscreteTypeMeasure,
    pub riccati: Vec<RiccatiSolution>,
    pub q: Trajectory,
    pub f: Trajectory,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub config: SolverConfig,
}

impl LimitSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.q.grid()
    }

    /// `F'` and the contagion-weighted intensity mass on the whole grid.
    pub fn intensity_profile(&self) -> Result<IntensityProfile, LimitError> {
        intensity_profile(&self.measure, &self.riccati, &self.q)
    }

    pub fn effective_contagion_weight(&self, k: usize) -> Result<f64, LimitError> {
        effective_contagion_weight(&self.measure, &self.riccati, &self.q, k)
    }
}

/// Riccati solves for every atom, in measure order.
pub fn solve_riccati_all(
    measure: &DiscreteTypeMeasure,
    grid: &TimeGrid,
    method: RiccatiMethod,
) -> Result<Vec<RiccatiSolution>, LimitError> {
    measure
        .atoms
        .iter()
        .map(|a| solve_riccati(&a.firm_type, grid, method))
        .collect()
}

/// Full pipeline: `b` per atom, then `Q`, then `F`.
///
/// The measure is expected to have passed
/// [`validate_measure`](crate::model::validate_measure).
pub fn solve_limit(
    measure: &DiscreteTypeMeasure,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<LimitSolution, LimitError> {
    config.validate()?;
    let riccati = solve_riccati_all(measure, grid, config.riccati)?;
    let q = solve_q(measure, &riccati, grid, config)?;
    let f = compute_f(measure, &riccati, &q.values)?;
    Ok(LimitSolution {
        measure: measure.clone(),
        riccati,
        q: q.values,
        f,
        iterations: q.iterations,
        residual: q.residual,
        residual_history: q.history,
        config: *config,
    })
}

pub(crate) fn check_shared_grid(
    measure: &DiscreteTypeMeasure,
    riccati: &[RiccatiSolution],
    grid: &TimeGrid,
) -> Result<(), LimitError> {
    if riccati.len() != measure.len() {
        return Err(LimitError::GridMismatch(format!(
            "{} riccati solutions for {} atoms",
            riccati.len(),
            measure.len()
        )));
    }
    if let Some(i) = riccati.iter().position(|r| r.grid() != grid) {
        return Err(LimitError::GridMismatch(format!(
            "riccati solution {i} is on a different grid"
        )));
    }
    Ok(())
}

/// Atom indices grouped by identical firm type, first-occurrence order.
///
/// Atoms that share a type share both time-convolutions, so the transform
/// is evaluated once per group.
pub(crate) fn type_groups(measure: &DiscreteTypeMeasure) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, atom) in measure.atoms.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| measure.atoms[g[0]].firm_type == atom.firm_type)
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}
