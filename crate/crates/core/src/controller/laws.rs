//! Torque/force laws for the five inner-loop variants.
//!
//! All variants share one structure: cancel the known Coriolis, damping and
//! restoring terms, then inject a per-channel feedback signal `v` as
//! `tau1 ~ m1 / (cos th' cos ps') * v1`, `tau2 ~ m4 * v2`, `tau3 ~ m5 * v3`.
//! They differ only in what `v` is and whether command derivatives are fed
//! forward.

use crate::dynamics::ControlInput;
use crate::dynamics::{SphericalSpeed, VehicleParams, VehicleState};
use crate::{Error, Result};

use super::shunting::ShuntingState;
use super::{CommandShaping, ControllerGains};

/// Loop errors, virtual rate commands and the derivative estimates used by
/// one evaluation of an inner law.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingErrors {
    pub tilde_u: f64,
    /// `theta_a - theta_cmd`, wrapped to `[-pi, pi]`.
    pub tilde_theta: f64,
    /// `psi_a - psi_cmd`, wrapped to `[-pi, pi]`.
    pub tilde_psi: f64,
    pub tilde_q: f64,
    pub tilde_r: f64,
    pub q_cmd: f64,
    pub r_cmd: f64,
    pub d_theta_prime: f64,
    pub d_psi_prime: f64,
    pub d_u_cmd: f64,
    pub d_theta_cmd: f64,
    pub d_psi_cmd: f64,
    pub d_q_cmd: f64,
    pub d_r_cmd: f64,
}

impl TrackingErrors {
    /// Velocity tracking error magnitude `sqrt(u~^2 + q~^2 + r~^2)`.
    pub fn z(&self) -> f64 {
        (self.tilde_u * self.tilde_u + self.tilde_q * self.tilde_q + self.tilde_r * self.tilde_r)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        [
            self.tilde_u,
            self.tilde_theta,
            self.tilde_psi,
            self.tilde_q,
            self.tilde_r,
            self.q_cmd,
            self.r_cmd,
            self.d_theta_prime,
            self.d_psi_prime,
            self.d_u_cmd,
            self.d_theta_cmd,
            self.d_psi_cmd,
            self.d_q_cmd,
            self.d_r_cmd,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

fn cos_pitch(theta: f64, margin: f64) -> Result<f64> {
    let c = theta.cos();
    if c <= margin {
        return Err(Error::SingularAttitude {
            cos_theta: c,
            margin,
        });
    }
    Ok(c)
}

/// Pitch and yaw rate commands that make the flow-frame attitude errors
/// decay at rates `k_theta`, `k_psi`. A turn-rate limit bounds the demanded
/// flow-angle rate; the flow-angle drift terms are always compensated.
pub fn virtual_angular_commands(
    theta: f64,
    e: &TrackingErrors,
    gains: &ControllerGains,
    shaping: &CommandShaping,
    margin: f64,
) -> Result<(f64, f64)> {
    let c = cos_pitch(theta, margin)?;
    let q_cmd = shaping.turn_rate(-gains.k_theta * e.tilde_theta + e.d_theta_cmd) - e.d_theta_prime;
    let r_cmd = c * (shaping.turn_rate(-gains.k_psi * e.tilde_psi + e.d_psi_cmd) - e.d_psi_prime);
    Ok((q_cmd, r_cmd))
}

fn shared_structure(
    state: &VehicleState,
    params: &VehicleParams,
    flow: &SphericalSpeed,
    e: &TrackingErrors,
    v: [f64; 3],
    feedforward: bool,
    margin: f64,
) -> Result<ControlInput> {
    let m = params.validate()?;
    let theta = state.theta();
    let cos_theta = cos_pitch(theta, margin)?;
    let (ctp, stp) = (flow.theta_prime.cos(), flow.theta_prime.sin());
    let (cpp, spp) = (flow.psi_prime.cos(), flow.psi_prime.sin());
    let projection = ctp * cpp;
    if projection < margin {
        return Err(Error::SingularTransform {
            value: projection,
            margin,
        });
    }
    let [u, vv, w] = [state.nu1[0], state.nu1[1], state.nu1[2]];
    let [q, r] = [state.nu2[0], state.nu2[1]];
    let [bu, bv, bw, bq, br] = params.damping;

    // Sway and heave contributions to the resultant-speed rate.
    let tau1_star =
        ctp * spp / m.m2 * (m.m1 * u * r + bv * vv) + stp / m.m3 * (m.m1 * u * q - bw * w);
    let (ff_u, ff_q, ff_r) = if feedforward {
        (e.d_u_cmd, e.d_q_cmd, e.d_r_cmd)
    } else {
        (0.0, 0.0, 0.0)
    };

    let tau1 =
        -m.m2 * vv * r + m.m3 * w * q + bu * u + m.m1 / projection * (v[0] + ff_u + tau1_star);
    let tau2 = -(m.m3 - m.m1) * u * w
        + bq * q
        + params.restoring * theta.sin()
        + m.m4 * (v[1] - e.tilde_theta + ff_q);
    let tau3 = -(m.m1 - m.m2) * u * vv + br * r + m.m5 * (v[2] - e.tilde_psi / cos_theta + ff_r);
    let out = ControlInput { tau1, tau2, tau3 };
    if out.as_array().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("control input"));
    }
    Ok(out)
}

/// Backstepping law with proportional loop feedback and derivative feedforward.
pub fn backstepping_law(
    state: &VehicleState,
    params: &VehicleParams,
    flow: &SphericalSpeed,
    e: &TrackingErrors,
    gains: &ControllerGains,
    margin: f64,
) -> Result<ControlInput> {
    let v = [
        -gains.k_u * e.tilde_u,
        -gains.k_q * e.tilde_q,
        -gains.k_r * e.tilde_r,
    ];
    shared_structure(state, params, flow, e, v, true, margin)
}

/// Backstepping law with the loop errors filtered through the shunting
/// compensators; command derivatives are left to the compensators.
pub fn neuro_backstepping_law(
    state: &VehicleState,
    params: &VehicleParams,
    flow: &SphericalSpeed,
    e: &TrackingErrors,
    x: &ShuntingState,
    gains: &ControllerGains,
    margin: f64,
) -> Result<ControlInput> {
    let v = [
        -gains.k_u * x.x[0],
        -gains.k_q * x.x[1],
        -gains.k_r * x.x[2],
    ];
    shared_structure(state, params, flow, e, v, false, margin)
}

/// Saturation with unit slope inside `[-1, 1]`.
pub fn sat(y: f64) -> f64 {
    y.clamp(-1.0, 1.0)
}

/// Sliding-mode variant: proportional feedback replaced by boundary-layer
/// switching terms.
pub fn smc_law(
    state: &VehicleState,
    params: &VehicleParams,
    flow: &SphericalSpeed,
    e: &TrackingErrors,
    gains: &ControllerGains,
    margin: f64,
) -> Result<ControlInput> {
    let phi = gains.smc.boundary_layer;
    let k = gains.smc.k;
    let v = [
        -k[0] * sat(e.tilde_u / phi),
        -k[1] * sat(e.tilde_q / phi),
        -k[2] * sat(e.tilde_r / phi),
    ];
    shared_structure(state, params, flow, e, v, true, margin)
}
