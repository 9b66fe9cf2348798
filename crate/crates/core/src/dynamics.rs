//! Rolling-robot kinematics.
//!
//! The robot is a unicycle driven by a rotating field: speed is proportional
//! to the rotation frequency `f` and the heading is the commanded angle
//! `alpha`. Writing `u = f (cos alpha, sin alpha)` makes the model linear,
//!
//! ```text
//! p_{t+1} = p_t + a0 * dt * u_t + D_t * dt
//! ```
//!
//! where `D` is the (unknown) disturbance velocity.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

/// Cartesian control, in Hz-equivalent units per axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlU {
    pub ux: f64,
    pub uy: f64,
}

impl ControlU {
    pub const ZERO: ControlU = ControlU { ux: 0.0, uy: 0.0 };

    pub fn new(ux: f64, uy: f64) -> Self {
        Self { ux, uy }
    }

    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.ux, self.uy)
    }

    pub fn norm(&self) -> f64 {
        self.ux.hypot(self.uy)
    }

    pub fn is_finite(&self) -> bool {
        self.ux.is_finite() && self.uy.is_finite()
    }
}

impl From<Vec2> for ControlU {
    fn from(v: Vec2) -> Self {
        Self { ux: v.x, uy: v.y }
    }
}

/// Rotation frequency (Hz) and heading (rad, in `[0, 2pi)`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolarControl {
    pub freq: f64,
    pub heading: f64,
}

impl PolarControl {
    /// Builds a polar control, wrapping the heading into `[0, 2pi)`.
    pub fn new(freq: f64, heading: f64) -> Result<Self> {
        if !(freq >= 0.0) || !heading.is_finite() {
            return Err(Error::invalid(format!(
                "polar control needs freq >= 0 and a finite heading, got ({freq}, {heading})"
            )));
        }
        Ok(Self {
            freq,
            heading: wrap_angle(heading),
        })
    }
}

/// Nominal model parameters: effective radius `a0` (um / (s Hz)) and step `dt` (s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a0: f64,
    pub dt: f64,
}

impl ModelParams {
    pub fn new(a0: f64, dt: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite()) {
            return Err(Error::invalid(format!("a0 must be positive, got {a0}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { a0, dt })
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

pub fn polar_to_u(pc: PolarControl) -> ControlU {
    let (s, c) = pc.heading.sin_cos();
    ControlU {
        ux: pc.freq * c,
        uy: pc.freq * s,
    }
}

/// Inverse of [`polar_to_u`]. The zero control maps to heading 0.
pub fn u_to_polar(u: ControlU) -> PolarControl {
    let freq = u.norm();
    let heading = if freq == 0.0 { 0.0 } else { wrap_angle(u.uy.atan2(u.ux)) };
    PolarControl { freq, heading }
}

/// One step of the discrete model: `p + a0 dt u + D dt`.
pub fn step(p: Vec2, u: ControlU, disturbance: Vec2, params: &ModelParams) -> Vec2 {
    p + params.a0 * params.dt * u.as_vec() + disturbance * params.dt
}
