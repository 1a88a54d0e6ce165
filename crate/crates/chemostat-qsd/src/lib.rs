//! Simulation and numerical-verification toolkit for a hybrid chemostat
//! model: a population of bacteria evolving by division/washout jumps,
//! fully coupled to a substrate concentration that follows an ODE between
//! jumps.
//!
//! The crate provides
//! - the deterministic substrate flow, its equilibria and inverse maps
//!   ([`flow`]),
//! - exact (thinning-based) stochastic simulation of the coupled process,
//!   extinction and hitting times ([`simulate`]),
//! - Lyapunov/drift certificates for the killed semigroup ([`lyapunov`]),
//! - quasi-stationary distribution, extinction-rate and Yaglom-limit
//!   estimators ([`qsd`]),
//! - closed-form probability bounds with Monte-Carlo cross-checks
//!   ([`bounds`]),
//! - a reproducible CLI over all of it ([`cli`]).

pub mod bounds;
pub mod cli;
pub mod error;
pub mod flow;
pub mod lyapunov;
pub mod model;
mod numeric;
pub mod qsd;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
