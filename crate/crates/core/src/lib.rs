//! Simulation and numerical verification toolkit for one-dimensional
//! variable-speed random walks among dynamical random conductances.
//!
//! The crate is organized around the objects of the model:
//!
//! - [`env`]: realized conductance fields `{b_t(x)}` with space-time shifts;
//! - [`walk`]: exact event-driven simulation of the variable-speed walk `X`;
//! - [`dual`]: the dual walk `Y` built through its explicit time change;
//! - [`kernel`]: Kolmogorov solves for the sub-stochastic kernel `K`, its
//!   jump-truncated iterates, and the Laplace-averaged invariant density;
//! - [`corrector`]: the invariant density field, parabolic coordinates and
//!   the corrector, with their structural identities;
//! - [`harness`]: end-to-end experiments, diagnostics and report emission.

pub mod corrector;
pub mod dual;
pub mod env;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
