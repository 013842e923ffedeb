//! Quantized primal-dual optimization over networks, with information-theoretic
//! convergence floors.
//!
//! The crate simulates gradient-based primal-dual (PD) dynamics for equality-
//! constrained network utility maximization when every variable exchanged
//! between agents and network nodes must pass through a finite-rate quantizer.
//! It provides:
//!
//! - [`problem`]: the optimization instance (concave utilities, linear
//!   constraints), validation of the standing assumptions, and an exact
//!   KKT solver for the reference optimum.
//! - [`pd`]: the synchronous PD update rules (exact and quantized), the
//!   linear transition matrix of the quadratic case, and contraction
//!   estimation.
//! - [`quantize`]: per-variable codec streams — a zoom-in adaptive midpoint
//!   quantizer whose cells shrink geometrically, plus passthrough and static
//!   uniform baselines — and the bit-rate ledger.
//! - [`lattice`]: counting integer-lattice images inside a box, the
//!   combinatorial quantity behind the rate-independent speed ceiling.
//! - [`bounds`]: distance-decay-exponent floors and finite-time mean-square-
//!   distance floors implied by entropy-power arguments.
//! - [`sim`]: a deterministic, parallel Monte Carlo harness that estimates
//!   error curves and checks them against every applicable floor.
//! - [`cli`]: the `qpd` command-line front end.
//!
//! All internal logarithms are natural; bit-denominated quantities convert
//! through `ln 2` exactly at the reporting boundary.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod pd;
pub mod problem;
pub mod quantize;
pub mod sim;

pub use error::{Error, Result};
