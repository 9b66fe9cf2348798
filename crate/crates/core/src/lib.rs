//! Disturbance-aware trajectory tracking for magnetically rolled microrobots.
//!
//! The crate covers the whole offline-learning / online-control loop:
//!
//! * [`gp`]: exact Gaussian-process regression (RBF + white noise, ARD).
//! * [`dynamics`]: the planar rolling model and the `u <-> (f, alpha)` mapping.
//! * [`sysid`]: velocity extraction, linear regression for the effective
//!   radius, residual datasets and per-axis disturbance GPs.
//! * [`mpc`]: condensed tracking QP, box-constrained solver and the
//!   receding-horizon step.
//! * [`planner`]: RRT* through circular obstacles and arc-length resampling.
//! * [`sim`]: ground-truth plant, training sweeps, closed-loop runs, metrics.
//!
//! Units are micrometres, seconds and hertz throughout.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod gp;
pub mod mpc;
pub mod planner;
pub mod sim;
pub mod sysid;

pub use error::{Error, Result};

/// Planar vector in micrometres (positions) or micrometres per second.
pub type Vec2 = nalgebra::Vector2<f64>;
