//! Dynamical random conductance environments.
//!
//! Realizations of the field `{b_t(x)}` of edge conductances: generation from
//! a spec, queries, exact integrals, and space-time shift views. Tracks are
//! piecewise constant in time, which keeps integrated rates, clock sampling
//! and the Kolmogorov solves exact. Dynamic specs are generated as two-sided
//! stationary processes so restrictions to sub-windows carry the stationary
//! law.

mod spec;
mod window;

pub use spec::{EnvKind, EnvSpec, LevelLaw, MarginalLaw, MomentViolation};
pub use window::{
    annealed_env_seed, Edge, EnvironmentWindow, RateTrack, ShiftOffset, SwitchCursorDown,
    SwitchCursorUp,
};
