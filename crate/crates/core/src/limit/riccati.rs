//! The affine coefficient `b` of the survival transform.
//!
//! `b` solves `b' = 1 - sigma^2 b^2 / 2 - alpha b` with `b(0) = 0`. Two
//! independent routes are provided: the explicit solution and classical RK4
//! on the grid step.

use serde::{Deserialize, Serialize};

use super::LimitError;
use crate::model::{FirmType, TimeGrid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiMethod {
    #[default]
    ClosedForm,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub firm_type: FirmType,
    pub b: Trajectory,
    pub b_dot: Trajectory,
    /// `∫_0^t b(s) ds`
    pub b_int: Trajectory,
    pub method: RiccatiMethod,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.b.grid()
    }

    /// `b''` on the grid, from differentiating the ODE: `b'' = -(sigma^2 b + alpha) b'`.
    pub fn b_ddot(&self) -> Vec<f64> {
        let p = &self.firm_type;
        let s2 = p.sigma * p.sigma;
        self.b
            .values()
            .iter()
            .zip(self.b_dot.values())
            .map(|(&b, &bd)| -(s2 * b + p.alpha) * bd)
            .collect()
    }
}

/// Right side of the Riccati equation.
#[inline]
pub fn riccati_rhs(p: &FirmType, b: f64) -> f64 {
    1.0 - 0.5 * p.sigma * p.sigma * b * b - p.alpha * b
}

/// Limit of `b(t)` as `t -> inf`, or `None` when `b` grows without bound
/// (`alpha = sigma = 0`).
pub fn steady_state(p: &FirmType) -> Option<f64> {
    if p.sigma > 0.0 {
        let disc = (p.alpha * p.alpha + 2.0 * p.sigma * p.sigma).sqrt();
        // 2 / (alpha + disc) is the positive root without cancellation
        Some(2.0 / (p.alpha + disc))
    } else if p.alpha > 0.0 {
        Some(1.0 / p.alpha)
    } else {
        None
    }
}

/// Explicit solution at time `t`.
pub fn closed_form_b(p: &FirmType, t: f64) -> f64 {
    if p.sigma > 0.0 {
        let disc = (p.alpha * p.alpha + 2.0 * p.sigma * p.sigma).sqrt();
        let one_minus_e = -(-disc * t).exp_m1();
        let e = 1.0 - one_minus_e;
        2.0 * one_minus_e / ((disc + p.alpha) * one_minus_e + 2.0 * disc * e)
    } else if p.alpha > 0.0 {
        -(-p.alpha * t).exp_m1() / p.alpha
    } else {
        t
    }
}

/// `∫_0^t b(s) ds` of the explicit solution.
pub fn closed_form_b_integral(p: &FirmType, t: f64) -> f64 {
    let (a, s2) = (p.alpha, p.sigma * p.sigma);
    if p.sigma > 0.0 {
        let disc = (a * a + 2.0 * s2).sqrt();
        let one_minus_e = -(-disc * t).exp_m1();
        2.0 * t / (disc + a) + 2.0 / s2 * (-s2 * one_minus_e / (disc * (disc + a))).ln_1p()
    } else if a * t > 1e-3 {
        (t + (-a * t).exp_m1() / a) / a
    } else {
        // series of the line above, also covering alpha = 0
        t * t * (0.5 - a * t / 6.0 + a * a * t * t / 24.0)
    }
}

pub fn solve_riccati(
    p: &FirmType,
    grid: &TimeGrid,
    method: RiccatiMethod,
) -> Result<RiccatiSolution, LimitError> {
    let (b, b_int) = match method {
        RiccatiMethod::ClosedForm => (
            grid.times()
                .map(|t| closed_form_b(p, t))
                .collect::<Vec<_>>(),
            grid.times()
                .map(|t| closed_form_b_integral(p, t))
                .collect::<Vec<_>>(),
        ),
        RiccatiMethod::Rk4 => rk4(p, grid),
    };
    if let Some(k) = b
        .iter()
        .zip(&b_int)
        .position(|(v, i)| !(v.is_finite() && i.is_finite()))
    {
        return Err(LimitError::NonFiniteResult {
            what: "riccati b",
            index: k,
        });
    }
    let b_dot: Vec<f64> = b.iter().map(|&x| riccati_rhs(p, x)).collect();
    if let Some(k) = b_dot.iter().position(|v| !v.is_finite()) {
        return Err(LimitError::NonFiniteResult {
            what: "riccati b_dot",
            index: k,
        });
    }
    Ok(RiccatiSolution {
        firm_type: *p,
        b: Trajectory::new(*grid, b).expect("grid-sized finite samples"),
        b_dot: Trajectory::new(*grid, b_dot).expect("grid-sized finite samples"),
        b_int: Trajectory::new(*grid, b_int).expect("grid-sized finite samples"),
        method,
    })
}

/// RK4 on the pair `(b, ∫b)`.
fn rk4(p: &FirmType, grid: &TimeGrid) -> (Vec<f64>, Vec<f64>) {
    let h = grid.dt();
    let mut out = Vec::with_capacity(grid.n_points());
    let mut int = Vec::with_capacity(grid.n_points());
    let (mut b, mut a) = (0.0, 0.0);
    out.push(b);
    int.push(a);
    for _ in 0..grid.n_steps() {
        // stages of b; the integral's stage slopes are the b stages themselves
        let s1 = b;
        let k1 = riccati_rhs(p, s1);
        let s2 = b + 0.5 * h * k1;
        let k2 = riccati_rhs(p, s2);
        let s3 = b + 0.5 * h * k2;
        let k3 = riccati_rhs(p, s3);
        let s4 = b + h * k3;
        let k4 = riccati_rhs(p, s4);
        a += h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
        b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(b);
        int.push(a);
    }
    (out, int)
}
