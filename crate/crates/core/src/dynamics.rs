//! Five-DOF underactuated vehicle model.
//!
//! State: position `[x, y, z]`, attitude `[theta, psi]` (pitch, yaw), body
//! linear velocity `[u, v, w]` and body angular rates `[q, r]`. Only surge
//! force and the pitch/yaw torques are actuated; sway and heave are driven
//! through the Coriolis coupling alone.

use nalgebra::{SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::ode::rk4_step;
use crate::{Error, Result};

/// Default guard on `cos(theta)` used wherever the model divides by it.
pub const ATTITUDE_MARGIN: f64 = 1e-3;
/// Speed floor below which flow angles are undefined.
pub const SPEED_FLOOR: f64 = 1e-6;
/// Flow angles are kept this far inside `(-pi/2, pi/2)`.
pub const ANGLE_CLAMP: f64 = FRAC_PI_2 - 1e-6;

/// Rigid-body and hydrodynamic coefficients of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia_y: f64,
    pub inertia_z: f64,
    /// Added-mass coefficients `beta_du, beta_dv, beta_dw, beta_dq, beta_dr`.
    pub added_mass: [f64; 5],
    /// Linear damping `beta_u, beta_v, beta_w, beta_q, beta_r`.
    pub damping: [f64; 5],
    /// Restoring (metacentric) coefficient `beta_b`.
    pub restoring: f64,
}

/// Effective masses `m1..m5` after subtracting the added-mass terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveMasses {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
}

impl VehicleParams {
    pub fn effective(&self) -> EffectiveMasses {
        let [du, dv, dw, dq, dr] = self.added_mass;
        EffectiveMasses {
            m1: self.mass - du,
            m2: self.mass - dv,
            m3: self.mass - dw,
            m4: self.inertia_y - dq,
            m5: self.inertia_z - dr,
        }
    }

    pub fn validate(&self) -> Result<EffectiveMasses> {
        let all = [self.mass, self.inertia_y, self.inertia_z, self.restoring]
            .into_iter()
            .chain(self.added_mass)
            .chain(self.damping);
        for v in all {
            if !v.is_finite() {
                return Err(Error::NonFinite("vehicle parameters"));
            }
        }
        if self.mass <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        if let Some(d) = self.damping.iter().find(|d| **d < 0.0) {
            return Err(Error::InvalidParams(format!(
                "damping coefficients must be non-negative, got {d}"
            )));
        }
        let m = self.effective();
        for (name, value) in [
            ("m1", m.m1),
            ("m2", m.m2),
            ("m3", m.m3),
            ("m4", m.m4),
            ("m5", m.m5),
        ] {
            if value <= 0.0 {
                return Err(Error::NonPositiveEffectiveMass { name, value });
            }
        }
        Ok(m)
    }
}

/// Pose and body velocities of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    /// `[x, y, z]`, earth-fixed (m).
    pub eta1: Vector3<f64>,
    /// `[theta, psi]` (rad).
    pub eta2: Vector2<f64>,
    /// `[u, v, w]`, body frame (m/s).
    pub nu1: Vector3<f64>,
    /// `[q, r]`, body frame (rad/s).
    pub nu2: Vector2<f64>,
}

impl VehicleState {
    pub fn from_pose_velocity(pose: [f64; 5], velocity: [f64; 5]) -> Self {
        Self {
            eta1: Vector3::new(pose[0], pose[1], pose[2]),
            eta2: Vector2::new(pose[3], pose[4]),
            nu1: Vector3::new(velocity[0], velocity[1], velocity[2]),
            nu2: Vector2::new(velocity[3], velocity[4]),
        }
    }

    pub fn to_vector(&self) -> SVector<f64, 10> {
        SVector::<f64, 10>::from_column_slice(&[
            self.eta1[0],
            self.eta1[1],
            self.eta1[2],
            self.eta2[0],
            self.eta2[1],
            self.nu1[0],
            self.nu1[1],
            self.nu1[2],
            self.nu2[0],
            self.nu2[1],
        ])
    }

    pub fn from_vector(v: &SVector<f64, 10>) -> Self {
        Self {
            eta1: Vector3::new(v[0], v[1], v[2]),
            eta2: Vector2::new(v[3], v[4]),
            nu1: Vector3::new(v[5], v[6], v[7]),
            nu2: Vector2::new(v[8], v[9]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    pub fn theta(&self) -> f64 {
        self.eta2[0]
    }

    pub fn psi(&self) -> f64 {
        self.eta2[1]
    }
}

/// Surge force and pitch/yaw torques.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl ControlInput {
    pub fn as_array(&self) -> [f64; 3] {
        [self.tau1, self.tau2, self.tau3]
    }
}

/// Generalised disturbance acting on the five dynamic equations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceVector(pub [f64; 5]);

impl DisturbanceVector {
    pub fn zero() -> Self {
        Self([0.0; 5])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|d| d * d).sum::<f64>().sqrt()
    }
}

fn check_attitude(theta: f64, margin: f64) -> Result<f64> {
    let c = theta.cos();
    if c <= margin {
        return Err(Error::SingularAttitude {
            cos_theta: c,
            margin,
        });
    }
    Ok(c)
}

/// Time derivative of the full 10-dimensional state.
pub fn state_derivative(
    state: &VehicleState,
    params: &VehicleParams,
    tau: &ControlInput,
    d: &DisturbanceVector,
    attitude_margin: f64,
) -> Result<VehicleState> {
    let m = params.validate()?;
    let (theta, psi) = (state.eta2[0], state.eta2[1]);
    let cos_theta = check_attitude(theta, attitude_margin)?;
    let (st, sp, cp) = (theta.sin(), psi.sin(), psi.cos());
    let [u, v, w] = [state.nu1[0], state.nu1[1], state.nu1[2]];
    let [q, r] = [state.nu2[0], state.nu2[1]];
    let [bu, bv, bw, bq, br] = params.damping;
    let d = d.0;

    let eta1_dot = Vector3::new(
        cos_theta * cp * u - sp * v + st * cp * w,
        cos_theta * sp * u + cp * v + st * sp * w,
        -st * u + cos_theta * w,
    );
    let eta2_dot = Vector2::new(q, r / cos_theta);
    let nu1_dot = Vector3::new(
        (m.m2 * v * r - m.m3 * w * q - bu * u + tau.tau1 + d[0]) / m.m1,
        (-m.m1 * u * r - bv * v + d[1]) / m.m2,
        (m.m1 * u * q - bw * w + d[2]) / m.m3,
    );
    let nu2_dot = Vector2::new(
        ((m.m3 - m.m1) * u * w - bq * q - params.restoring * st + tau.tau2 + d[3]) / m.m4,
        ((m.m1 - m.m2) * u * v - br * r + tau.tau3 + d[4]) / m.m5,
    );
    Ok(VehicleState {
        eta1: eta1_dot,
        eta2: eta2_dot,
        nu1: nu1_dot,
        nu2: nu2_dot,
    })
}

/// Resultant speed and flow angles of the body velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SphericalSpeed {
    pub u_a: f64,
    pub theta_prime: f64,
    pub psi_prime: f64,
    pub theta_a: f64,
    pub psi_a: f64,
}

/// Non-fatal conditions raised by [`spherical_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransformFlags {
    /// Speed below the floor; flow angles held at the supplied values.
    pub degenerate_speed: bool,
    /// A flow angle had to be clamped inside `(-pi/2, pi/2)`.
    pub clamped: bool,
}

/// Spherical re-parameterisation of the body velocity.
///
/// `prev` supplies `(theta', psi')` to hold when the speed is below `u_eps`.
pub fn spherical_transform(
    nu1: &Vector3<f64>,
    eta2: &Vector2<f64>,
    prev: (f64, f64),
    u_eps: f64,
) -> (SphericalSpeed, TransformFlags) {
    let [u, v, w] = [nu1[0], nu1[1], nu1[2]];
    let u_a = nu1.norm();
    let mut flags = TransformFlags::default();
    let (theta_prime, psi_prime) = if u_a < u_eps {
        flags.degenerate_speed = true;
        prev
    } else {
        let horizontal = u.hypot(v);
        let mut tp = (-w).atan2(horizontal);
        if tp.abs() > ANGLE_CLAMP {
            tp = tp.signum() * ANGLE_CLAMP;
            flags.clamped = true;
        }
        let pp = if u > 0.0 {
            (v / u).atan()
        } else {
            flags.clamped = true;
            if v < 0.0 {
                -ANGLE_CLAMP
            } else {
                ANGLE_CLAMP
            }
        };
        (tp, pp)
    };
    let speed = SphericalSpeed {
        u_a,
        theta_prime,
        psi_prime,
        theta_a: eta2[0] + theta_prime,
        psi_a: eta2[1] + psi_prime,
    };
    (speed, flags)
}

/// Body velocity rebuilt from resultant speed and flow angles.
pub fn body_velocity(u_a: f64, theta_prime: f64, psi_prime: f64) -> Vector3<f64> {
    Vector3::new(
        u_a * theta_prime.cos() * psi_prime.cos(),
        u_a * theta_prime.cos() * psi_prime.sin(),
        -u_a * theta_prime.sin(),
    )
}

/// Position rate expressed through the transformed speed and attitude.
pub fn transformed_kinematics(s: &SphericalSpeed) -> Vector3<f64> {
    Vector3::new(
        s.u_a * s.theta_a.cos() * s.psi_a.cos(),
        s.u_a * s.theta_a.cos() * s.psi_a.sin(),
        -s.u_a * s.theta_a.sin(),
    )
}

/// Advance one vehicle by `dt` with the input held and the disturbance
/// evaluated at the RK4 stage times.
pub fn integrate_step(
    state: &VehicleState,
    params: &VehicleParams,
    tau: &ControlInput,
    disturbance: impl Fn(f64) -> DisturbanceVector,
    t: f64,
    dt: f64,
    attitude_margin: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let y = state.to_vector();
    let next = rk4_step(t, &y, dt, |ts, ys| {
        let s = VehicleState::from_vector(ys);
        state_derivative(&s, params, tau, &disturbance(ts), attitude_margin).map(|r| r.to_vector())
    })?;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("integrated vehicle state"));
    }
    Ok(VehicleState::from_vector(&next))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    pub(crate) fn reference_params() -> VehicleParams {
        VehicleParams {
            mass: 10.0,
            inertia_y: 3.0,
            inertia_z: 2.0,
            added_mass: [6.0, 1.1, 1.15, 0.5, 0.45],
            damping: [1.0, 1.1, 1.15, 0.2, 0.25],
            restoring: 0.1,
        }
    }

    fn zero_tau() -> ControlInput {
        ControlInput::default()
    }

    #[test]
    fn effective_masses() {
        let m = reference_params().validate().unwrap();
        assert!((m.m1 - 4.0).abs() < 1e-12);
        assert!((m.m2 - 8.9).abs() < 1e-12);
        assert!((m.m3 - 8.85).abs() < 1e-12);
        assert!((m.m4 - 2.5).abs() < 1e-12);
        assert!((m.m5 - 1.55).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_effective_mass() {
        let mut p = reference_params();
        p.added_mass[0] = 10.0;
        assert!(matches!(
            p.validate(),
            Err(Error::NonPositiveEffectiveMass { name: "m1", .. })
        ));
        let mut p = reference_params();
        p.damping[2] = -0.1;
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn equilibrium_at_rest() {
        let s = VehicleState::default();
        let r = state_derivative(
            &s,
            &reference_params(),
            &zero_tau(),
            &DisturbanceVector::zero(),
            ATTITUDE_MARGIN,
        )
        .unwrap();
        assert_eq!(r.to_vector(), SVector::<f64, 10>::zeros());
    }

    #[test]
    fn pure_surge_decay_rate() {
        let s = VehicleState::from_pose_velocity([0.0; 5], [1.0, 0.0, 0.0, 0.0, 0.0]);
        let r = state_derivative(
            &s,
            &reference_params(),
            &zero_tau(),
            &DisturbanceVector::zero(),
            ATTITUDE_MARGIN,
        )
        .unwrap();
        let expected = [1.0, 0.0, 0.0, 0.0, 0.0, -0.25, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in r.to_vector().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn singular_attitude_guard() {
        let s = VehicleState::from_pose_velocity([0.0, 0.0, 0.0, FRAC_PI_2 - 1e-4, 0.0], [0.0; 5]);
        let err = state_derivative(
            &s,
            &reference_params(),
            &zero_tau(),
            &DisturbanceVector::zero(),
            ATTITUDE_MARGIN,
        );
        assert!(matches!(err, Err(Error::SingularAttitude { .. })));
    }

    #[test]
    fn spherical_transform_examples() {
        let z = Vector2::zeros();
        let (s, f) = spherical_transform(&Vector3::new(1.0, 0.0, 0.0), &z, (0.0, 0.0), SPEED_FLOOR);
        assert_eq!(
            (s.u_a, s.theta_prime, s.psi_prime, s.theta_a, s.psi_a),
            (1.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(f, TransformFlags::default());

        let (s, _) = spherical_transform(&Vector3::new(1.0, 1.0, 0.0), &z, (0.0, 0.0), SPEED_FLOOR);
        assert!((s.u_a - 2f64.sqrt()).abs() < 1e-15);
        assert!(s.theta_prime.abs() < 1e-15);
        assert!((s.psi_prime - FRAC_PI_4).abs() < 1e-15);

        let (s, _) = spherical_transform(&Vector3::new(3.0, 4.0, 0.0), &z, (0.0, 0.0), SPEED_FLOOR);
        assert!((s.u_a - 5.0).abs() < 1e-15);
        assert!((s.psi_prime - 0.927_295_218_001_612_2).abs() < 1e-12);
        assert_eq!(s.theta_prime, 0.0);
    }

    #[test]
    fn spherical_transform_holds_below_floor() {
        let (s, f) = spherical_transform(
            &Vector3::new(1e-8, 0.0, 0.0),
            &Vector2::new(0.1, 0.2),
            (0.3, -0.2),
            SPEED_FLOOR,
        );
        assert!(f.degenerate_speed);
        assert_eq!((s.theta_prime, s.psi_prime), (0.3, -0.2));
        assert!((s.theta_a - 0.4).abs() < 1e-15);
        assert!((s.psi_a - 0.0).abs() < 1e-15);
    }

    #[test]
    fn spherical_transform_reverse_surge_is_clamped() {
        let (s, f) = spherical_transform(
            &Vector3::new(-1.0, 0.5, 0.0),
            &Vector2::zeros(),
            (0.0, 0.0),
            SPEED_FLOOR,
        );
        assert!(f.clamped);
        assert_eq!(s.psi_prime, ANGLE_CLAMP);
        let (s, f) = spherical_transform(
            &Vector3::new(0.0, 0.0, 2.0),
            &Vector2::zeros(),
            (0.0, 0.0),
            SPEED_FLOOR,
        );
        assert!(f.clamped);
        assert_eq!(s.theta_prime, -ANGLE_CLAMP);
    }

    #[test]
    fn transformed_kinematics_examples() {
        let s = SphericalSpeed {
            u_a: 1.0,
            ..Default::default()
        };
        assert_eq!(transformed_kinematics(&s), Vector3::new(1.0, 0.0, 0.0));
        let s = SphericalSpeed {
            u_a: 2.0,
            theta_a: FRAC_PI_4,
            psi_a: FRAC_PI_4,
            ..Default::default()
        };
        let p = transformed_kinematics(&s);
        assert!((p - Vector3::new(1.0, 1.0, -2f64.sqrt())).norm() < 1e-14);
        let s = SphericalSpeed {
            u_a: 0.0,
            theta_a: 0.3,
            psi_a: -1.0,
            ..Default::default()
        };
        assert_eq!(transformed_kinematics(&s), Vector3::zeros());
    }

    #[test]
    fn integrate_zero_state_stays_zero() {
        let s = VehicleState::default();
        let n = integrate_step(
            &s,
            &reference_params(),
            &zero_tau(),
            |_| DisturbanceVector::zero(),
            0.0,
            0.01,
            ATTITUDE_MARGIN,
        )
        .unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn integrate_rejects_bad_step() {
        let s = VehicleState::default();
        let p = reference_params();
        for dt in [0.0, -0.1, f64::NAN] {
            assert!(matches!(
                integrate_step(
                    &s,
                    &p,
                    &zero_tau(),
                    |_| DisturbanceVector::zero(),
                    0.0,
                    dt,
                    ATTITUDE_MARGIN
                ),
                Err(Error::InvalidTimeStep(_))
            ));
        }
    }

    /// Forward Euler at a very fine step; independent of the RK4 path.
    fn fine_euler(mut s: VehicleState, horizon: f64, h: f64) -> VehicleState {
        let p = reference_params();
        let steps = (horizon / h).round() as usize;
        for _ in 0..steps {
            let r = state_derivative(
                &s,
                &p,
                &zero_tau(),
                &DisturbanceVector::zero(),
                ATTITUDE_MARGIN,
            )
            .unwrap();
            s = VehicleState::from_vector(&(s.to_vector() + r.to_vector() * h));
        }
        s
    }

    #[test]
    fn rk4_matches_fine_euler_on_surge_decay() {
        let s0 = VehicleState::from_pose_velocity([0.0; 5], [1.0, 0.0, 0.0, 0.0, 0.0]);
        let p = reference_params();
        let mut s = s0;
        for k in 0..100 {
            s = integrate_step(
                &s,
                &p,
                &zero_tau(),
                |_| DisturbanceVector::zero(),
                k as f64 * 0.01,
                0.01,
                ATTITUDE_MARGIN,
            )
            .unwrap();
        }
        let oracle = fine_euler(s0, 1.0, 1e-6);
        for (a, b) in s.to_vector().iter().zip(oracle.to_vector().iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn disturbance_enters_affinely() {
        let s = VehicleState::from_pose_velocity(
            [1.0, 2.0, 3.0, 0.2, 0.4],
            [1.2, 0.1, -0.2, 0.05, -0.1],
        );
        let p = reference_params();
        let tau = ControlInput {
            tau1: 3.0,
            tau2: -1.0,
            tau3: 0.5,
        };
        let d1 = DisturbanceVector([0.3, -0.2, 0.5, 1.0, -1.5]);
        let d2 = DisturbanceVector([1.0, 2.0, -3.0, 0.4, 0.2]);
        let sum = DisturbanceVector(std::array::from_fn(|k| d1.0[k] + d2.0[k]));
        let zero = state_derivative(&s, &p, &tau, &DisturbanceVector::zero(), ATTITUDE_MARGIN)
            .unwrap()
            .to_vector();
        let a = state_derivative(&s, &p, &tau, &sum, ATTITUDE_MARGIN)
            .unwrap()
            .to_vector()
            - state_derivative(&s, &p, &tau, &d1, ATTITUDE_MARGIN)
                .unwrap()
                .to_vector();
        let b = state_derivative(&s, &p, &tau, &d2, ATTITUDE_MARGIN)
            .unwrap()
            .to_vector()
            - zero;
        assert!((a - b).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn body_velocity_round_trip(u in 1e-3f64..5.0, v in -5.0f64..5.0, w in -5.0f64..5.0,
                                    theta in -1.4f64..1.4, psi in -PI..PI) {
            let nu = Vector3::new(u, v, w);
            let (s, f) = spherical_transform(&nu, &Vector2::new(theta, psi), (0.0, 0.0), SPEED_FLOOR);
            prop_assert!(!f.degenerate_speed && !f.clamped);
            prop_assert!(s.theta_prime.abs() < FRAC_PI_2 && s.psi_prime.abs() < FRAC_PI_2);
            prop_assert!(((s.u_a * s.u_a) - nu.norm_squared()).abs() <= 1e-12 * nu.norm_squared());
            let back = body_velocity(s.u_a, s.theta_prime, s.psi_prime);
            prop_assert!((back - nu).amax() < 1e-9);
        }

        // The transformed position kinematics coincide with the body-frame
        // kinematics exactly when the vehicle is level or has no sideslip.
        #[test]
        fn transformed_kinematics_exact_when_level(u in 1e-2f64..5.0, v in -5.0f64..5.0, w in -5.0f64..5.0,
                                                   psi in -PI..PI) {
            let s = VehicleState::from_pose_velocity([0.0, 0.0, 0.0, 0.0, psi], [u, v, w, 0.0, 0.0]);
            let direct = state_derivative(&s, &reference_params(), &zero_tau(), &DisturbanceVector::zero(), ATTITUDE_MARGIN).unwrap().eta1;
            let (sph, _) = spherical_transform(&s.nu1, &s.eta2, (0.0, 0.0), SPEED_FLOOR);
            prop_assert!((transformed_kinematics(&sph) - direct).amax() < 1e-9);
        }

        #[test]
        fn transformed_kinematics_exact_without_sideslip(u in 1e-2f64..5.0, w in -5.0f64..5.0,
                                                         theta in -(FRAC_PI_2 - 0.1)..(FRAC_PI_2 - 0.1), psi in -PI..PI) {
            let s = VehicleState::from_pose_velocity([0.0, 0.0, 0.0, theta, psi], [u, 0.0, w, 0.0, 0.0]);
            let direct = state_derivative(&s, &reference_params(), &zero_tau(), &DisturbanceVector::zero(), ATTITUDE_MARGIN).unwrap().eta1;
            let (sph, _) = spherical_transform(&s.nu1, &s.eta2, (0.0, 0.0), SPEED_FLOOR);
            prop_assert!((transformed_kinematics(&sph) - direct).amax() < 1e-9);
        }

        // Pitched and sideslipping: the mismatch is second order in the
        // product of pitch and sideslip angle.
        #[test]
        fn transformed_kinematics_mismatch_is_second_order(u in 0.5f64..5.0, v in -0.5f64..0.5, w in -1.0f64..1.0,
                                                            theta in -0.5f64..0.5, psi in -PI..PI) {
            let s = VehicleState::from_pose_velocity([0.0, 0.0, 0.0, theta, psi], [u, v, w, 0.0, 0.0]);
            let direct = state_derivative(&s, &reference_params(), &zero_tau(), &DisturbanceVector::zero(), ATTITUDE_MARGIN).unwrap().eta1;
            let (sph, _) = spherical_transform(&s.nu1, &s.eta2, (0.0, 0.0), SPEED_FLOOR);
            let bound = 2.0 * sph.u_a * theta.abs() * sph.psi_prime.abs();
            prop_assert!((transformed_kinematics(&sph) - direct).norm() <= bound + 1e-12);
        }
    }
}
