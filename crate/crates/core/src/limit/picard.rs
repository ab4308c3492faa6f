use rayon::prelude::*;

use super::quadrature::convolve;
use super::riccati::solve_riccati;
use super::transform::TypeConvolutions;
use super::{check_shared_grid, type_groups, LimitError, RiccatiSolution, SolverConfig};
use crate::model::{DiscreteTypeMeasure, FirmType, TimeGrid, Trajectory};

/// Converged fixed point and its iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub values: Trajectory,
    pub iterations: usize,
    /// Sup-norm of the last update.
    pub residual: f64,
    /// Sup-norm of every update, in order.
    pub history: Vec<f64>,
}

/// Runs `x <- (1 - θ) x + θ map(x)` from `x = 0` until the update is at most `tol`.
///
/// A map that ignores its argument is exact after one evaluation and is
/// reported as converged with zero residual.
fn iterate<M>(
    grid: &TimeGrid,
    config: &SolverConfig,
    constant_map: bool,
    mut map: M,
    mut check: impl FnMut(&[f64]) -> Result<(), LimitError>,
) -> Result<(Vec<f64>, usize, f64, Vec<f64>), LimitError>
where
    M: FnMut(&[f64]) -> Vec<f64>,
{
    config.validate()?;
    let theta = config.relaxation;
    let mut x = vec![0.0; grid.n_points()];
    if constant_map {
        let next = map(&x);
        check(&next)?;
        return Ok((next, 1, 0.0, vec![0.0]));
    }
    let mut history = Vec::new();
    for it in 1..=config.max_iter {
        let mut next = map(&x);
        if theta < 1.0 {
            for (n, &old) in next.iter_mut().zip(&x) {
                *n = (1.0 - theta) * old + theta * *n;
            }
        }
        check(&next)?;
        let residual = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(residual);
        x = next;
        if residual <= config.tol {
            return Ok((x, it, residual, history));
        }
    }
    Err(LimitError::NoConvergence {
        iterations: config.max_iter,
        residual: *history.last().expect("max_iter >= 1"),
    })
}

fn check_finite(values: &[f64], what: &'static str) -> Result<(), LimitError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LimitError::NonFiniteResult { what, index }),
        None => Ok(()),
    }
}

/// The map whose fixed point is the contagion forcing `Q`.
fn contagion_map(
    measure: &DiscreteTypeMeasure,
    riccati: &[RiccatiSolution],
    groups: &[Vec<usize>],
    q: &[f64],
) -> Vec<f64> {
    let n = q.len();
    let parts: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|g| {
            let r = &riccati[g[0]];
            let beta_c = r.firm_type.beta_c;
            let conv = TypeConvolutions::new(r, q);
            let mut part = vec![0.0; n];
            for &i in g {
                let atom = &measure.atoms[i];
                let l0 = atom.lambda_init;
                let scale = atom.weight * beta_c;
                for (k, slot) in part.iter_mut().enumerate() {
                    *slot +=
                        scale * conv.intensity_factor(r, l0, k) * (-conv.exponent(r, l0, k)).exp();
                }
            }
            part
        })
        .collect();
    let mut acc = vec![0.0; n];
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}

/// Picard fixed point of the contagion forcing `Q` on the grid.
///
/// Both time-convolutions use the trapezoid on the shared grid. Values in
/// `(-tol, 0)` are clamped to zero on return; anything lower is an error.
pub fn solve_q(
    measure: &DiscreteTypeMeasure,
    riccati: &[RiccatiSolution],
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<FixedPoint, LimitError> {
    check_shared_grid(measure, riccati, grid)?;
    // atoms without contagion exposure contribute nothing to Q
    let groups: Vec<Vec<usize>> = type_groups(measure)
        .into_iter()
        .filter(|g| riccati[g[0]].firm_type.beta_c != 0.0)
        .collect();
    let tol = config.tol;
    let (mut q, iterations, residual, history) = iterate(
        grid,
        config,
        groups.is_empty(),
        |q| contagion_map(measure, riccati, &groups, q),
        |q| {
            check_finite(q, "Q")?;
            match q.iter().enumerate().find(|(_, &v)| v <= -tol) {
                Some((index, &value)) => Err(LimitError::NegativeQ { index, value }),
                None => Ok(()),
            }
        },
    )?;
    for v in q.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(FixedPoint {
        values: Trajectory::new(*grid, q).expect("finite grid-sized samples"),
        iterations,
        residual,
        history,
    })
}

/// Fixed point of the single-type integral equation for `F` directly.
///
/// Independent of [`solve_q`]: the contagion enters through `β^C ∫ F(r) b'(t-r) dr`
/// instead of the forcing `Q`.
pub fn solve_homogeneous_f(
    p: &FirmType,
    lambda_init: f64,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<FixedPoint, LimitError> {
    let grid = *grid;
    let riccati = solve_riccati(p, &grid, config.riccati)?;
    let dt = grid.dt();
    let b = riccati.b.values();
    let b_dot = riccati.b_dot.values();
    let base: Vec<f64> = riccati
        .b_int
        .values()
        .iter()
        .zip(b)
        .map(|(ib, bk)| p.drift_level() * ib + bk * lambda_init)
        .collect();
    let beta_c = p.beta_c;
    let (f, iterations, residual, history) = iterate(
        &grid,
        config,
        beta_c == 0.0,
        |f| {
            let conv = convolve(b_dot, f, dt);
            base.iter()
                .zip(&conv)
                .map(|(e, c)| -(-(e + beta_c * c)).exp_m1())
                .collect()
        },
        |f| check_finite(f, "F"),
    )?;
    Ok(FixedPoint {
        values: Trajectory::new(grid, f).expect("finite grid-sized samples"),
        iterations,
        residual,
        history,
    })
}
