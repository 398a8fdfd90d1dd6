//! Limited-duration control barrier functions.
//!
//! A barrier `B` with constants `(L, beta, T)` certifies that trajectories
//! starting in `{B <= L e^{-beta T}/beta}` stay in `{B < L/beta}` for at least
//! `T` seconds, provided every applied control satisfies an affine inequality
//! at the current state. This crate provides the pieces around that idea:
//!
//! - [`system`]: dynamics, barriers, control sets and RK4 simulation
//! - [`qp`]: dense active-set QP, simplex LP and the feasible-width LP
//! - [`filter`]: the minimal-deviation safety filter and duration certificates

pub mod compose;
pub mod envs;
pub mod error;
pub mod filter;
pub mod nn;
pub mod qp;
pub mod rng;
pub mod runner;
pub mod stochastic;
pub mod system;
pub mod trainer;
pub mod value;

pub use error::{Error, Result};
