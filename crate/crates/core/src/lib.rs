//! Driven-damped Coulomb particle ring.
//!
//! `N` particles on a ring of length `L` repel their nearest neighbours
//! with force `alpha / r^2`, are pushed by an external profile `g F(x)` and
//! slowed by linear friction `a(v) = A0 + A v`. The crate builds the static
//! configuration with equal effective force, integrates the dynamics, solves
//! the linearized deviation equations mode by mode and runs a fixed-point
//! iteration for the nonlinear deviations in a weighted supremum norm.

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
mod expint;
pub mod forcefield;
pub mod params;
pub mod picard;
mod quad;
pub mod spectral;
pub mod trajectory;

pub use error::{Error, Result};
