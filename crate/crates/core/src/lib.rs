//! Bandit convex optimization from one noisy loss evaluation per round.
//!
//! The optimizer plays points inside a convex body, sees a single noisy loss
//! value each round, and competes with the best fixed point in hindsight. It
//! works on a convex extension of the losses (so the iterate may leave the
//! body), estimates a Gaussian-smoothed surrogate of each extended loss from
//! the one observation, and feeds the resulting quadratic models to an online
//! Newton step. Adversarial runs additionally maintain focus regions, negative
//! bonus terms, and a restart test.
//!
//! Module map:
//! - [`geometry`]: convex bodies, gauges, radial projection, sampling-based
//!   isotropic positioning, mean-width estimation.
//! - [`extension`]: the bandit-evaluable convex extension and observation
//!   assembly.
//! - [`surrogate`]: density-ratio surrogate estimates (value, gradient,
//!   Hessian) plus exact and Monte Carlo references for quadratic losses.
//! - [`qp`]: projections onto intersections of a body with ellipsoids, and
//!   projected-gradient minimization of quadratics and smooth convex
//!   objectives over them.
//! - [`ons`]: the online-Newton-step state machine (potential, iterates,
//!   covariances, bonuses, restarts) and its trace instrumentation.
//! - [`env`]: simulated loss environments, noise models, the Lovász
//!   extension, and offline comparators for regret accounting.

pub mod env;
pub mod error;
pub mod extension;
pub mod geometry;
pub mod ons;
pub mod qp;
pub mod surrogate;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Which game the optimizer is playing. Stochastic mode fixes the loss
/// distribution across rounds and disables bonuses and restarts; adversarial
/// mode allows an oblivious per-round loss sequence and enables both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Adversarial,
    Stochastic,
}
