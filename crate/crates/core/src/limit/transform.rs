//! Exponential-affine survival transform.
//!
//! For an atom with type `p` and initial intensity `l0`, and a candidate
//! forcing `q`, write `g = q + alpha * lambda_bar`. Then
//!
//! ```text
//! survival(t) = exp(-b(t) l0 - (b * g)(t))
//! mass(t)     = (b'(t) l0 + (b' * g)(t)) survival(t)
//! ```
//!
//! where `*` is time-convolution. `1 - sum(w survival)` is the default rate
//! and `sum(w mass)` its derivative. The constant part of `g` is integrated
//! exactly (`b * c = c ∫b`, `b' * c = c b`); only `q` goes through quadrature.

use rayon::prelude::*;

use super::quadrature::{convolve, convolve_at, convolve_pair};
use super::{check_shared_grid, type_groups, LimitError, RiccatiSolution};
use crate::model::{DiscreteTypeMeasure, Trajectory};

/// Convolutions of `b` and `b'` with `q + alpha lambda_bar` on the whole grid.
pub(crate) struct TypeConvolutions {
    pub with_b: Vec<f64>,
    pub with_b_dot: Vec<f64>,
}

impl TypeConvolutions {
    pub fn new(r: &RiccatiSolution, q: &[f64]) -> Self {
        let dt = r.grid().dt();
        let c = r.firm_type.drift_level();
        let (mut with_b, mut with_b_dot) = convolve_pair(r.b.values(), r.b_dot.values(), q, dt);
        for (k, (cb, cbd)) in with_b.iter_mut().zip(&mut with_b_dot).enumerate() {
            *cb += c * r.b_int.values()[k];
            *cbd += c * r.b.values()[k];
        }
        Self { with_b, with_b_dot }
    }

    pub fn exponent(&self, r: &RiccatiSolution, lambda_init: f64, k: usize) -> f64 {
        r.b.values()[k] * lambda_init + self.with_b[k]
    }

    pub fn intensity_factor(&self, r: &RiccatiSolution, lambda_init: f64, k: usize) -> f64 {
        r.b_dot.values()[k] * lambda_init + self.with_b_dot[k]
    }
}

fn check_q(q: &Trajectory, riccati: &[RiccatiSolution]) -> Result<(), LimitError> {
    if riccati.first().is_some_and(|r| r.grid() != q.grid()) {
        return Err(LimitError::GridMismatch(
            "q and riccati grids differ".into(),
        ));
    }
    Ok(())
}

/// Limit default rate `F(t_k) = sum_atoms w (1 - survival)`.
pub fn compute_f(
    measure: &DiscreteTypeMeasure,
    riccati: &[RiccatiSolution],
    q: &Trajectory,
) -> Result<Trajectory, LimitError> {
    check_shared_grid(measure, riccati, q.grid())?;
    check_q(q, riccati)?;
    let n = q.grid().n_points();
    let groups = type_groups(measure);
    let parts: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|g| {
            let r = &riccati[g[0]];
            let conv = TypeConvolutions::new(r, q.values());
            let mut part = vec![0.0; n];
            for &i in g {
                let atom = &measure.atoms[i];
                for (k, slot) in part.iter_mut().enumerate() {
                    *slot += atom.weight * -(-conv.exponent(r, atom.lambda_init, k)).exp_m1();
                }
            }
            part
        })
        .collect();
    let f = sum_parts(parts, n);
    if let Some(k) = f.iter().position(|v| !v.is_finite()) {
        return Err(LimitError::NonFiniteResult {
            what: "F",
            index: k,
        });
    }
    Ok(Trajectory::new(*q.grid(), f).expect("finite grid-sized samples"))
}

fn sum_parts(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}

/// Intensity moments of the limit measure on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    /// `F'(t_k) = ∫ λ dμ_t`
    pub f_dot: Vec<f64>,
    /// `∫ β^C λ dμ_t`
    pub contagion_weighted: Vec<f64>,
}

impl IntensityProfile {
    /// Effective contagion weight `B(μ_t)` at each grid point.
    pub fn effective_weight(&self, k: usize) -> Result<f64, LimitError> {
        ratio(self.contagion_weighted[k], self.f_dot[k], k)
    }
}

pub(crate) const DEGENERATE_MASS: f64 = 1e-14;

fn ratio(weighted: f64, mass: f64, k: usize) -> Result<f64, LimitError> {
    if mass.is_nan() || mass <= DEGENERATE_MASS {
        return Err(LimitError::DegenerateMeasure { index: k, mass });
    }
    Ok(weighted / mass)
}

/// Per-atom λ-weighted survival masses, summed two ways, for every grid index.
pub fn intensity_profile(
    measure: &DiscreteTypeMeasure,
    riccati: &[RiccatiSolution],
    q: &Trajectory,
) -> Result<IntensityProfile, LimitError> {
    check_shared_grid(measure, riccati, q.grid())?;
    check_q(q, riccati)?;
    let n = q.grid().n_points();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = type_groups(measure)
        .par_iter()
        .map(|g| {
            let r = &riccati[g[0]];
            let conv = TypeConvolutions::new(r, q.values());
            let beta_c = r.firm_type.beta_c;
            let mut mass = vec![0.0; n];
            for &i in g {
                let atom = &measure.atoms[i];
                for (k, slot) in mass.iter_mut().enumerate() {
                    let l0 = atom.lambda_init;
                    *slot += atom.weight
                        * conv.intensity_factor(r, l0, k)
                        * (-conv.exponent(r, l0, k)).exp();
                }
            }
            let weighted = mass.iter().map(|m| beta_c * m).collect();
            (mass, weighted)
        })
        .collect();
    let (masses, weighted): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(IntensityProfile {
        f_dot: sum_parts(masses, n),
        contagion_weighted: sum_parts(weighted, n),
    })
}

/// `B(μ_t)` at grid index `k`: the intensity-weighted mean contagion sensitivity.
pub fn effective_contagion_weight(
    measure: &DiscreteTypeMeasure,
    riccati: &[RiccatiSolution],
    q: &Trajectory,
    k: usize,
) -> Result<f64, LimitError> {
    check_shared_grid(measure, riccati, q.grid())?;
    check_q(q, riccati)?;
    if k >= q.grid().n_points() {
        return Err(LimitError::GridMismatch(format!(
            "grid index {k} out of range"
        )));
    }
    let dt = q.grid().dt();
    let mut mass = 0.0;
    let mut weighted = 0.0;
    for g in type_groups(measure) {
        let r = &riccati[g[0]];
        let c = r.firm_type.drift_level();
        let cb = convolve_at(r.b.values(), q.values(), dt, k) + c * r.b_int.values()[k];
        let cbd = convolve_at(r.b_dot.values(), q.values(), dt, k) + c * r.b.values()[k];
        for i in g {
            let atom = &measure.atoms[i];
            let l0 = atom.lambda_init;
            let m = atom.weight
                * (r.b_dot.values()[k] * l0 + cbd)
                * (-(r.b.values()[k] * l0 + cb)).exp();
            mass += m;
            weighted += r.firm_type.beta_c * m;
        }
    }
    ratio(weighted, mass, k)
}

/// `F'` for a single-type portfolio, by differentiating the integral
/// equation `F = 1 - exp(-(αλ̄ ∫b + β^C ∫F(r) b'(t-r) dr + b λ0))` in `t`.
///
/// Uses `b(0) = 0`, `b'(0) = 1`, and the analytic `b''`, so no difference
/// quotients of `F` are taken.
pub fn homogeneous_f_dot(
    riccati: &RiccatiSolution,
    lambda_init: f64,
    f: &Trajectory,
) -> Result<Vec<f64>, LimitError> {
    if riccati.grid() != f.grid() {
        return Err(LimitError::GridMismatch(
            "F and riccati grids differ".into(),
        ));
    }
    let p = &riccati.firm_type;
    let dt = f.grid().dt();
    let b_ddot = riccati.b_ddot();
    let conv = convolve(&b_ddot, f.values(), dt);
    let b = riccati.b.values();
    let bd = riccati.b_dot.values();
    Ok(f.values()
        .iter()
        .enumerate()
        .map(|(k, &fk)| {
            let rate = p.drift_level() * b[k] + p.beta_c * (fk + conv[k]) + bd[k] * lambda_init;
            (1.0 - fk) * rate
        })
        .collect())
}
