//! Desk-scale computational ergodic theory.
//!
//! * [`interval_dynamics`]: piecewise-monotone interval maps, exact images
//!   and the covering criterion for turbulent orbits.
//! * [`transfer_operators`]: Ulam discretizations of Frobenius–Perron
//!   operators, invariant densities and stability diagnostics.
//! * [`open_systems`]: maps with holes, escape rates and conditionally
//!   invariant densities.
//! * [`pdmp`]: piecewise deterministic Markov processes and the
//!   stability-versus-sweeping dichotomy.
//! * [`function_semiflows`]: semiflows of first-order transport equations
//!   and their Gaussian invariant measures.
//! * [`stochastics`]: seeded streams and the statistics shared by the above.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod function_semiflows;
pub mod interval_dynamics;
pub mod open_systems;
pub mod pdmp;
pub mod stochastics;
pub mod transfer_operators;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
