//! Distributed, constrained, robust formation tracking for a fleet of
//! underactuated underwater vehicles.
//!
//! The crate is layered the same way the control architecture is:
//!
//! - [`dynamics`]: five-DOF vehicle model, spherical speed transform and
//!   fixed-step integration.
//! - [`graph`]: communication topology, Laplacian/pinning algebra and the
//!   neighbour-only information view each vehicle is allowed to use.
//! - [`consensus`]: consensus formation-tracking error, virtual velocity law
//!   and extraction of speed/attitude commands.
//! - [`optimizer`]: per-sample gain optimisation subject to a velocity box.
//! - [`controller`]: inner-loop laws (backstepping, shunting-neurodynamics
//!   backstepping, sliding mode), derivative estimation and stability checks.
//! - [`sim`]: scenarios, the closed-loop engine, CSV logging and metrics.

pub mod consensus;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod ode;
pub mod optimizer;
pub mod sim;

pub use error::{Error, Result};

/// Wrap an angle to `[-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI && a > 0.0 {
        PI
    } else {
        w
    }
}
