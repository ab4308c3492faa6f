//! Monte Carlo simulation of the finite pool.
//!
//! Each firm's intensity is stepped with full-truncation Euler, the
//! systematic factor with its exact Gaussian transition. A firm defaults at
//! the first step end where its integrated intensity reaches its standard
//! exponential threshold; all defaults detected at one step end are applied
//! to the survivors together as a single contagion jump.
//!
//! Randomness is keyed by `(seed, replication)` and split into one ChaCha
//! stream per firm plus one for the factor, so a path never depends on
//! thread count or evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    DiscreteTypeMeasure, FirmType, ModelError, SystematicFactorConfig, TimeGrid, Trajectory,
};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("NONFINITE_STATE: firm {firm} at step {step}")]
    NonFiniteState { firm: usize, step: usize },
    #[error("MOMENTS_NOT_RECORDED: order {order} was not recorded")]
    MomentsNotRecorded { order: u32 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How firms are allotted to atoms of the type measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Deterministic largest-remainder counts, firms laid out atom by atom.
    #[default]
    Proportional,
    /// Each firm draws its atom independently from the weights.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_firms: usize,
    pub measure: DiscreteTypeMeasure,
    pub factor: SystematicFactorConfig,
    pub grid: TimeGrid,
    pub seed: u64,
    pub assignment: Assignment,
    /// Orders `p` of the cross-sectional moments `(1/N) Σ λ_n^p` to record.
    pub record_moments: Vec<u32>,
}

impl SimConfig {
    pub fn new(n_firms: usize, measure: DiscreteTypeMeasure, grid: TimeGrid, seed: u64) -> Self {
        Self {
            n_firms,
            measure,
            factor: SystematicFactorConfig::default(),
            grid,
            seed,
            assignment: Assignment::Proportional,
            record_moments: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_firms == 0 {
            return Err(SimError::InvalidConfig("n_firms must be >= 1".into()));
        }
        if self.measure.is_empty() {
            return Err(SimError::InvalidConfig("measure has no atoms".into()));
        }
        self.factor.validate()?;
        Ok(())
    }
}

/// Largest-remainder allocation of `n` firms to the given weights.
///
/// Ties in the fractional parts go to the lower atom index.
pub fn proportional_counts(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn replication_key(seed: u64, replication: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replication.to_le_bytes());
    key[16..].copy_from_slice(b"contagion-pool\0\0");
    key
}

const FACTOR_STREAM: u64 = 0;

fn stream(key: [u8; 32], id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

fn firm_stream(key: [u8; 32], firm: usize) -> ChaCha8Rng {
    stream(key, firm as u64 + 1)
}

/// Per-firm state during a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub lambda: Vec<f64>,
    pub integrated: Vec<f64>,
    pub threshold: Vec<f64>,
    pub alive: Vec<bool>,
    pub x: f64,
    pub defaults_so_far: usize,
}

impl PortfolioState {
    /// Fraction of the pool in default.
    pub fn default_fraction(&self) -> f64 {
        self.defaults_so_far as f64 / self.alive.len() as f64
    }
}

/// Cross-sectional intensity moments recorded at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPaths {
    pub orders: Vec<u32>,
    pub paths: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Default fraction `L^N` on the grid.
    pub l_path: Trajectory,
    /// Step-end default time per firm, `None` for survivors.
    pub default_times: Vec<Option<f64>>,
    /// Atom index of each firm.
    pub firm_atoms: Vec<usize>,
    pub intensity_moment_paths: Option<MomentPaths>,
    pub final_state: PortfolioState,
    pub seed_used: u64,
    pub replication: u64,
}

/// Replication 0 of `config`.
pub fn simulate(config: &SimConfig) -> Result<SimResult, SimError> {
    simulate_replication(config, 0)
}

fn assign_firms(config: &SimConfig, rngs: &mut [ChaCha8Rng]) -> Vec<usize> {
    let weights: Vec<f64> = config.measure.atoms.iter().map(|a| a.weight).collect();
    match config.assignment {
        Assignment::Proportional => proportional_counts(&weights, config.n_firms)
            .into_iter()
            .enumerate()
            .flat_map(|(atom, count)| std::iter::repeat_n(atom, count))
            .collect(),
        Assignment::Sampled => {
            let total: f64 = weights.iter().sum();
            rngs.iter_mut()
                .map(|rng| {
                    let u: f64 = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    weights
                        .iter()
                        .position(|w| {
                            acc += w;
                            u < acc
                        })
                        .unwrap_or(weights.len() - 1)
                })
                .collect()
        }
    }
}

pub fn simulate_replication(config: &SimConfig, replication: u64) -> Result<SimResult, SimError> {
    config.validate()?;
    let n = config.n_firms;
    let grid = config.grid;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let key = replication_key(config.seed, replication);

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| firm_stream(key, i)).collect();
    let threshold: Vec<f64> = rngs.iter_mut().map(|r| r.sample(Exp1)).collect();
    let firm_atoms = assign_firms(config, &mut rngs);
    let types: Vec<FirmType> = firm_atoms
        .iter()
        .map(|&a| config.measure.atoms[a].firm_type)
        .collect();

    let mut state = PortfolioState {
        lambda: firm_atoms
            .iter()
            .map(|&a| config.measure.atoms[a].lambda_init)
            .collect(),
        integrated: vec![0.0; n],
        threshold,
        alive: vec![true; n],
        x: config.factor.x_init,
        defaults_so_far: 0,
    };
    let mut default_times = vec![None; n];

    let gamma = config.factor.gamma;
    let decay = (-gamma * dt).exp();
    let factor_sd = (-(-2.0 * gamma * dt).exp_m1() / (2.0 * gamma)).sqrt();
    let eps = config.factor.eps_schedule.eps(n);
    let mut factor_rng = stream(key, FACTOR_STREAM);

    let orders = &config.record_moments;
    let mut moments: Vec<Vec<f64>> = orders
        .iter()
        .map(|_| Vec::with_capacity(grid.n_points()))
        .collect();
    let record = |state: &PortfolioState, moments: &mut Vec<Vec<f64>>| {
        for (path, &p) in moments.iter_mut().zip(orders) {
            let s: f64 = state
                .lambda
                .iter()
                .map(|&l| l.max(0.0).powi(p as i32))
                .sum();
            path.push(s / n as f64);
        }
    };
    record(&state, &mut moments);

    let mut l_path = Vec::with_capacity(grid.n_points());
    l_path.push(0.0);
    let mut newly_dead = Vec::new();

    for step in 0..grid.n_steps() {
        let z: f64 = factor_rng.sample(StandardNormal);
        let x_next = state.x * decay + factor_sd * z;
        let dx = x_next - state.x;
        state.x = x_next;

        for i in 0..n {
            if !state.alive[i] {
                continue;
            }
            let p = &types[i];
            let lam = state.lambda[i];
            let lp = lam.max(0.0);
            let dw: f64 = rngs[i].sample::<f64, _>(StandardNormal) * sqrt_dt;
            let next = lam - p.alpha * (lp - p.lambda_bar) * dt
                + p.sigma * lp.sqrt() * dw
                + eps * p.beta_s * lp * dx;
            if !next.is_finite() {
                return Err(SimError::NonFiniteState { firm: i, step });
            }
            state.integrated[i] += 0.5 * (lp + next.max(0.0)) * dt;
            state.lambda[i] = next;
        }

        let t = grid.time(step + 1);
        newly_dead.clear();
        for i in 0..n {
            if state.alive[i] && state.integrated[i] >= state.threshold[i] {
                newly_dead.push(i);
            }
        }
        for &i in &newly_dead {
            state.alive[i] = false;
            default_times[i] = Some(t);
        }
        let d = newly_dead.len();
        if d > 0 {
            state.defaults_so_far += d;
            let jump = d as f64 / n as f64;
            let survivors = state.lambda.iter_mut().zip(&state.alive).zip(&types);
            for ((lam, _), p) in survivors.filter(|((_, &alive), _)| alive) {
                *lam += jump * p.beta_c;
            }
        }
        l_path.push(state.default_fraction());
        record(&state, &mut moments);
    }

    let intensity_moment_paths = if orders.is_empty() {
        None
    } else {
        Some(MomentPaths {
            orders: orders.clone(),
            paths: moments
                .into_iter()
                .map(|m| Trajectory::new(grid, m))
                .collect::<Result<_, _>>()?,
        })
    };

    Ok(SimResult {
        l_path: Trajectory::new(grid, l_path)?,
        default_times,
        firm_atoms,
        intensity_moment_paths,
        final_state: state,
        seed_used: config.seed,
        replication,
    })
}

/// Pointwise summary of `L^N` across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: Trajectory,
    pub q10: Trajectory,
    pub q90: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replications {
    pub results: Vec<SimResult>,
    pub aggregate: Aggregate,
}

/// Runs replications `0..n_reps` in parallel; results are in replication order.
pub fn run_replications(config: &SimConfig, n_reps: usize) -> Result<Replications, SimError> {
    if n_reps == 0 {
        return Err(SimError::InvalidConfig("n_reps must be >= 1".into()));
    }
    let results: Vec<SimResult> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| simulate_replication(config, r))
        .collect::<Result<_, _>>()?;
    let aggregate = aggregate(&results, &config.grid)?;
    Ok(Replications { results, aggregate })
}

fn aggregate(results: &[SimResult], grid: &TimeGrid) -> Result<Aggregate, SimError> {
    let n = grid.n_points();
    let mut mean = Vec::with_capacity(n);
    let mut q10 = Vec::with_capacity(n);
    let mut q90 = Vec::with_capacity(n);
    let mut column = Vec::with_capacity(results.len());
    for k in 0..n {
        column.clear();
        column.extend(results.iter().map(|r| r.l_path.values()[k]));
        mean.push(column.iter().sum::<f64>() / column.len() as f64);
        column.sort_by(f64::total_cmp);
        q10.push(quantile_sorted(&column, 0.1));
        q90.push(quantile_sorted(&column, 0.9));
    }
    Ok(Aggregate {
        mean: Trajectory::new(*grid, mean)?,
        q10: Trajectory::new(*grid, q10)?,
        q90: Trajectory::new(*grid, q90)?,
    })
}

/// Recorded path of `(1/N) Σ_n (λ_n^+)^p` over all firms, alive or not.
pub fn moment_diagnostic(result: &SimResult, p: u32) -> Result<&Trajectory, SimError> {
    result
        .intensity_moment_paths
        .as_ref()
        .and_then(|m| m.orders.iter().position(|&o| o == p).map(|i| &m.paths[i]))
        .ok_or(SimError::MomentsNotRecorded { order: p })
}

/// `E[λ_t]` and `E[λ_t^2]` of a square-root diffusion started at `l0` with
/// no contagion and no factor exposure.
pub fn cir_moments(p: &FirmType, l0: f64, t: f64) -> (f64, f64) {
    let a = p.alpha;
    let s2 = p.sigma * p.sigma;
    let e = (-a * t).exp();
    // (1 - e^{-at}) / a and its a -> 0 limit
    let phi = if a > 0.0 { -(-a * t).exp_m1() / a } else { t };
    let mean = p.lambda_bar + (l0 - p.lambda_bar) * e;
    // Var = σ² l0 e^{-at} φ + σ² λ̄ a φ² / 2
    let var = s2 * l0 * e * phi + 0.5 * s2 * p.lambda_bar * a * phi * phi;
    (mean, var + mean * mean)
}

/// Outcome of comparing recorded moments against the contagion-free reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    /// Largest ratio of recorded moment to reference over the grid.
    pub worst_ratio: f64,
    /// First grid index where the ratio exceeds the allowed multiple.
    pub first_violation: Option<usize>,
}

/// Flags scheme blow-up: the recorded moment of order `p` (1 or 2) exceeding
/// `multiple` times the measure-averaged contagion-free moment.
pub fn moment_blowup_check(
    result: &SimResult,
    measure: &DiscreteTypeMeasure,
    p: u32,
    multiple: f64,
) -> Result<MomentCheck, SimError> {
    if !(p == 1 || p == 2) {
        return Err(SimError::InvalidConfig(format!(
            "reference moments exist for p = 1, 2, not {p}"
        )));
    }
    let path = moment_diagnostic(result, p)?;
    let grid = path.grid();
    let mut worst: f64 = 0.0;
    let mut first = None;
    for (k, &v) in path.values().iter().enumerate() {
        let t = grid.time(k);
        let reference: f64 = measure
            .atoms
            .iter()
            .map(|a| {
                let (m1, m2) = cir_moments(&a.firm_type, a.lambda_init, t);
                a.weight * if p == 1 { m1 } else { m2 }
            })
            .sum();
        let ratio = if reference > 0.0 {
            v / reference
        } else if v > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
        if first.is_none() && ratio > multiple {
            first = Some(k);
        }
    }
    Ok(MomentCheck {
        worst_ratio: worst,
        first_violation: first,
    })
}
