//! Inner-loop control: attitude backstepping and the per-variant force laws.

pub mod estimator;
pub mod laws;
pub mod shunting;
pub mod stability;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consensus::VirtualCommand;
use crate::dynamics::{
    spherical_transform, ControlInput, SphericalSpeed, VehicleParams, VehicleState, SPEED_FLOOR,
};
use crate::{wrap_angle, Error, Result};

use estimator::WashoutDifferentiator;
pub use laws::TrackingErrors;
use shunting::{shunting_step, ShuntingParams, ShuntingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ControllerVariant {
    /// Shunting compensators plus online gain optimisation.
    Nboc,
    /// Plain backstepping plus online gain optimisation.
    Boc,
    /// Shunting compensators, fixed gains.
    Nbc,
    /// Plain backstepping, fixed gains.
    Bc,
    /// Backstepping sliding mode, fixed gains.
    Bsmc,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 5] =
        [Self::Nboc, Self::Boc, Self::Nbc, Self::Bc, Self::Bsmc];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Nboc => "NBOC",
            Self::Boc => "BOC",
            Self::Nbc => "NBC",
            Self::Bc => "BC",
            Self::Bsmc => "BSMC",
        }
    }

    pub fn optimizes_gains(&self) -> bool {
        matches!(self, Self::Nboc | Self::Boc)
    }

    pub fn uses_shunting(&self) -> bool {
        matches!(self, Self::Nboc | Self::Nbc)
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidScenario(format!("unknown controller variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcParams {
    /// Switching gains for the surge, pitch-rate and yaw-rate channels.
    pub k: [f64; 3],
    pub boundary_layer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    pub k_theta: f64,
    pub k_psi: f64,
    pub k_u: f64,
    pub k_q: f64,
    pub k_r: f64,
    pub shunting: ShuntingParams,
    pub smc: SmcParams,
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("k_theta", self.k_theta),
            ("k_psi", self.k_psi),
            ("k_u", self.k_u),
            ("k_q", self.k_q),
            ("k_r", self.k_r),
            ("boundary_layer", self.smc.boundary_layer),
        ];
        let channels = [
            ("a", self.shunting.a),
            ("b", self.shunting.b),
            ("b_prime", self.shunting.b_prime),
            ("smc.k", self.smc.k),
        ];
        for (name, v) in named.into_iter().chain(
            channels
                .iter()
                .flat_map(|(n, a)| a.iter().map(move |v| (*n, *v))),
        ) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidGains(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Limits applied to the outer-loop command before the inner loop sees it.
/// With every field unset the command passes through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandShaping {
    /// Bound on the demanded flow-angle rates, rad/s.
    pub turn_rate_limit: Option<f64>,
    /// Bound on `|theta_cmd|`, rad.
    pub pitch_limit: Option<f64>,
    /// The speed command is scaled by `max(cos th~ cos ps~, floor)` so a
    /// vehicle pointing the wrong way turns before it accelerates.
    pub alignment_floor: Option<f64>,
    /// Keeps the speed target at or above `hypot(v, w) / sin(limit)`, so
    /// braking can never push a flow angle past `limit`.
    pub max_flow_angle: Option<f64>,
}

impl CommandShaping {
    pub fn validate(&self) -> Result<()> {
        let bad =
            |what: &str, v: f64| Err(Error::InvalidGains(format!("{what} out of range: {v}")));
        if let Some(v) = self.turn_rate_limit {
            if !(v > 0.0 && v.is_finite()) {
                return bad("turn_rate_limit", v);
            }
        }
        for (what, v) in [
            ("pitch_limit", self.pitch_limit),
            ("max_flow_angle", self.max_flow_angle),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v < std::f64::consts::FRAC_PI_2) {
                    return bad(what, v);
                }
            }
        }
        if let Some(v) = self.alignment_floor {
            if !(0.0..=1.0).contains(&v) {
                return bad("alignment_floor", v);
            }
        }
        Ok(())
    }

    pub fn pitch(&self, theta_cmd: f64) -> f64 {
        match self.pitch_limit {
            Some(l) => theta_cmd.clamp(-l, l),
            None => theta_cmd,
        }
    }

    pub fn turn_rate(&self, rate: f64) -> f64 {
        match self.turn_rate_limit {
            Some(l) => rate.clamp(-l, l),
            None => rate,
        }
    }

    /// Speed target given the commanded speed, the attitude errors and the
    /// body-frame sway/heave speed.
    pub fn speed(&self, u_cmd: f64, tilde_theta: f64, tilde_psi: f64, lateral: f64) -> f64 {
        let mut u = u_cmd;
        if let Some(floor) = self.alignment_floor {
            u *= (tilde_theta.cos() * tilde_psi.cos()).max(floor);
        }
        if let Some(limit) = self.max_flow_angle {
            u = u.max(lateral / limit.sin());
        }
        u
    }
}

/// Output of one inner-loop evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOutput {
    pub tau: ControlInput,
    pub errors: TrackingErrors,
    pub flow: SphericalSpeed,
    /// Shunting activities used for this evaluation.
    pub shunting: ShuntingState,
}

/// Per-vehicle inner-loop state: filters, shunting neurons and the last
/// valid flow angles.
#[derive(Debug, Clone)]
pub struct InnerController {
    variant: ControllerVariant,
    gains: ControllerGains,
    shaping: CommandShaping,
    dt: f64,
    attitude_margin: f64,
    flow_prev: (f64, f64),
    shunting: ShuntingState,
    d_theta_prime: WashoutDifferentiator,
    d_psi_prime: WashoutDifferentiator,
    d_u_cmd: WashoutDifferentiator,
    d_theta_cmd: WashoutDifferentiator,
    d_psi_cmd: WashoutDifferentiator,
    d_q_cmd: WashoutDifferentiator,
    d_r_cmd: WashoutDifferentiator,
}

impl InnerController {
    pub fn new(
        variant: ControllerVariant,
        gains: ControllerGains,
        shaping: CommandShaping,
        tau_f: f64,
        dt: f64,
        attitude_margin: f64,
    ) -> Result<Self> {
        gains.validate()?;
        shaping.validate()?;
        let f = WashoutDifferentiator::new(tau_f, dt)?;
        Ok(Self {
            variant,
            gains,
            shaping,
            dt,
            attitude_margin,
            flow_prev: (0.0, 0.0),
            shunting: ShuntingState::default(),
            d_theta_prime: f.clone(),
            d_psi_prime: f.clone(),
            d_u_cmd: f.clone(),
            d_theta_cmd: f.clone(),
            d_psi_cmd: f.clone(),
            d_q_cmd: f.clone(),
            d_r_cmd: f,
        })
    }

    pub fn variant(&self) -> ControllerVariant {
        self.variant
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn shunting_state(&self) -> ShuntingState {
        self.shunting
    }

    /// Compute the input to hold over the next step and advance the
    /// controller's internal filters by one step.
    pub fn step(
        &mut self,
        state: &VehicleState,
        params: &VehicleParams,
        cmd: &VirtualCommand,
    ) -> Result<InnerOutput> {
        let (flow, _) = spherical_transform(&state.nu1, &state.eta2, self.flow_prev, SPEED_FLOOR);
        self.flow_prev = (flow.theta_prime, flow.psi_prime);

        let theta_cmd = self.shaping.pitch(cmd.theta_cmd);
        let tilde_theta = wrap_angle(flow.theta_a - theta_cmd);
        let tilde_psi = wrap_angle(flow.psi_a - cmd.psi_cmd);
        let u_target = self.shaping.speed(
            cmd.u_cmd,
            tilde_theta,
            tilde_psi,
            state.nu1[1].hypot(state.nu1[2]),
        );
        let mut e = TrackingErrors {
            tilde_u: flow.u_a - u_target,
            tilde_theta,
            tilde_psi,
            d_theta_prime: self.d_theta_prime.update(flow.theta_prime),
            d_psi_prime: self.d_psi_prime.update(flow.psi_prime),
            d_u_cmd: self.d_u_cmd.update(u_target),
            d_theta_cmd: self.d_theta_cmd.update(theta_cmd),
            d_psi_cmd: self.d_psi_cmd.update(cmd.psi_cmd),
            ..Default::default()
        };
        let (q_cmd, r_cmd) = laws::virtual_angular_commands(
            state.theta(),
            &e,
            &self.gains,
            &self.shaping,
            self.attitude_margin,
        )?;
        e.q_cmd = q_cmd;
        e.r_cmd = r_cmd;
        e.tilde_q = state.nu2[0] - q_cmd;
        e.tilde_r = state.nu2[1] - r_cmd;
        e.d_q_cmd = self.d_q_cmd.update(q_cmd);
        e.d_r_cmd = self.d_r_cmd.update(r_cmd);
        if !e.is_finite() {
            return Err(Error::NonFinite("tracking errors"));
        }

        let margin = self.attitude_margin;
        let used = self.shunting;
        let tau = match self.variant {
            ControllerVariant::Nboc | ControllerVariant::Nbc => {
                let tau = laws::neuro_backstepping_law(
                    state,
                    params,
                    &flow,
                    &e,
                    &used,
                    &self.gains,
                    margin,
                )?;
                self.shunting = shunting_step(
                    &used,
                    [e.tilde_u, e.tilde_q, e.tilde_r],
                    &self.gains.shunting,
                    self.dt,
                );
                tau
            }
            ControllerVariant::Boc | ControllerVariant::Bc => {
                laws::backstepping_law(state, params, &flow, &e, &self.gains, margin)?
            }
            ControllerVariant::Bsmc => {
                laws::smc_law(state, params, &flow, &e, &self.gains, margin)?
            }
        };
        Ok(InnerOutput {
            tau,
            errors: e,
            flow,
            shunting: used,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dynamics::tests::reference_params;
    use crate::dynamics::{integrate_step, DisturbanceVector, ATTITUDE_MARGIN};

    pub(crate) fn table_gains() -> ControllerGains {
        ControllerGains {
            k_theta: 2.0,
            k_psi: 2.0,
            k_u: 10.0,
            k_q: 10.0,
            k_r: 10.0,
            shunting: ShuntingParams {
                a: [10.0; 3],
                b: [30.0; 3],
                b_prime: [30.0; 3],
            },
            smc: SmcParams {
                k: [20.0, 15.0, 15.0],
                boundary_layer: 0.05,
            },
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ControllerVariant::ALL {
            assert_eq!(
                v.name()
                    .to_lowercase()
                    .parse::<ControllerVariant>()
                    .unwrap(),
                v
            );
        }
        assert!("PID".parse::<ControllerVariant>().is_err());
    }

    #[test]
    fn gains_must_be_positive() {
        let mut g = table_gains();
        g.shunting.b_prime[2] = 0.0;
        assert!(g.validate().is_err());
        let mut g = table_gains();
        g.k_psi = f64::NAN;
        assert!(g.validate().is_err());
    }

    #[test]
    fn shaping_defaults_pass_through() {
        let s = CommandShaping::default();
        assert_eq!(s.pitch(-1.4), -1.4);
        assert_eq!(s.turn_rate(7.0), 7.0);
        assert_eq!(s.speed(2.0, 3.0, 3.0, 5.0), 2.0);
    }

    #[test]
    fn shaping_limits() {
        let s = CommandShaping {
            turn_rate_limit: Some(0.4),
            pitch_limit: Some(0.8),
            alignment_floor: Some(0.1),
            max_flow_angle: Some(0.5),
        };
        s.validate().unwrap();
        assert_eq!(s.pitch(-1.4), -0.8);
        assert_eq!(s.turn_rate(-3.0), -0.4);
        // aligned: untouched; reversed: floored
        assert_eq!(s.speed(2.0, 0.0, 0.0, 0.0), 2.0);
        assert!((s.speed(2.0, 0.0, 3.0, 0.0) - 0.2).abs() < 1e-15);
        // lateral speed keeps the target up
        assert!((s.speed(0.1, 0.0, 0.0, 0.3) - 0.3 / 0.5f64.sin()).abs() < 1e-12);
        for bad in [
            CommandShaping {
                turn_rate_limit: Some(0.0),
                ..s
            },
            CommandShaping {
                pitch_limit: Some(1.6),
                ..s
            },
            CommandShaping {
                alignment_floor: Some(1.5),
                ..s
            },
            CommandShaping {
                max_flow_angle: Some(-0.1),
                ..s
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    // A single vehicle held on a constant command converges in speed and
    // heading under every law.
    #[test]
    fn regulates_constant_command() {
        let p = reference_params();
        let cmd = VirtualCommand {
            u_cmd: 1.0,
            theta_cmd: 0.1,
            psi_cmd: 0.5,
            ..Default::default()
        };
        for v in ControllerVariant::ALL {
            let mut c = InnerController::new(
                v,
                table_gains(),
                CommandShaping::default(),
                0.02,
                1e-3,
                ATTITUDE_MARGIN,
            )
            .unwrap();
            let mut s = VehicleState::from_pose_velocity([0.0; 5], [0.1, 0.0, 0.0, 0.0, 0.0]);
            let mut last = None;
            for k in 0..20_000 {
                let out = c.step(&s, &p, &cmd).unwrap();
                s = integrate_step(
                    &s,
                    &p,
                    &out.tau,
                    |_| DisturbanceVector::zero(),
                    k as f64 * 1e-3,
                    1e-3,
                    ATTITUDE_MARGIN,
                )
                .unwrap();
                last = Some(out);
            }
            let e = last.unwrap().errors;
            assert!(
                e.tilde_u.abs() < 1e-3 && e.tilde_theta.abs() < 1e-3 && e.tilde_psi.abs() < 1e-3,
                "{v:?}: {e:?}"
            );
        }
    }
}
