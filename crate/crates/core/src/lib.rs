//! Default clustering in large portfolios with contagion.
//!
//! Each firm's default intensity is a square-root diffusion that jumps by
//! `β^C / N` whenever another firm in the pool defaults and is exposed to a
//! shared Ornstein-Uhlenbeck factor. [`sim`] simulates the finite pool,
//! [`limit`] computes the deterministic default rate `F` of the infinite pool,
//! and [`lab`] compares the two.

pub mod io;
pub mod lab;
pub mod limit;
pub mod model;
pub mod sim;
pub mod stats;
