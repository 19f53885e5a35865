//! Consensus formation-tracking error, virtual velocity law and command
//! extraction.

use nalgebra::{DMatrix, DVector, Vector3};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Debug;
use std::sync::Arc;

use crate::dynamics::{ANGLE_CLAMP, SPEED_FLOOR};
use crate::graph::{FleetTopology, NeighborSnapshot};
use crate::{Error, Result};

/// Reference position and its first two derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

pub trait ReferenceTrajectory: Debug + Send + Sync {
    fn sample(&self, t: f64) -> ReferenceSample;
}

/// Straight line `p0 + v t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearReference {
    pub origin: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl ReferenceTrajectory for LinearReference {
    fn sample(&self, t: f64) -> ReferenceSample {
        ReferenceSample {
            position: self.origin + self.velocity * t,
            velocity: self.velocity,
            acceleration: Vector3::zeros(),
        }
    }
}

/// Desired relative offsets `delta_ij = eta_i - eta_j` and the common
/// reference trajectory.
#[derive(Debug, Clone)]
pub struct FormationSpec {
    offsets: BTreeMap<(usize, usize), Vector3<f64>>,
    reference: Arc<dyn ReferenceTrajectory>,
}

impl FormationSpec {
    pub fn new(
        offsets: BTreeMap<(usize, usize), Vector3<f64>>,
        reference: Arc<dyn ReferenceTrajectory>,
    ) -> Result<Self> {
        for (&(i, j), d) in &offsets {
            if i == j {
                return Err(Error::InvalidFormation(format!(
                    "offset ({i}, {j}) relates a vehicle to itself"
                )));
            }
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidFormation(format!(
                    "offset ({i}, {j}) is not finite"
                )));
            }
            if let Some(back) = offsets.get(&(j, i)) {
                if (d + back).amax() > 1e-12 {
                    return Err(Error::InvalidFormation(format!(
                        "offsets ({i}, {j}) and ({j}, {i}) are not antisymmetric"
                    )));
                }
            }
        }
        Ok(Self { offsets, reference })
    }

    pub fn delta(&self, i: usize, j: usize) -> Option<Vector3<f64>> {
        self.offsets.get(&(i, j)).copied()
    }

    pub fn offsets(&self) -> &BTreeMap<(usize, usize), Vector3<f64>> {
        &self.offsets
    }

    pub fn reference(&self) -> &dyn ReferenceTrajectory {
        self.reference.as_ref()
    }

    /// Every communication edge must carry an offset.
    pub fn check_edges(&self, topology: &FleetTopology) -> Result<()> {
        for i in 0..topology.n() {
            for j in topology.neighbors(i) {
                if !self.offsets.contains_key(&(i, j)) {
                    return Err(Error::MissingDelta { i, j });
                }
            }
        }
        if let Some(&(i, j)) = self
            .offsets
            .keys()
            .find(|(i, j)| *i >= topology.n() || *j >= topology.n())
        {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                n: topology.n(),
            });
        }
        Ok(())
    }
}

/// Consensus formation-tracking error of one vehicle, computed from its
/// local view only.
pub fn consensus_error(
    view: &NeighborSnapshot,
    own_eta1: &Vector3<f64>,
    formation: &FormationSpec,
) -> Result<Vector3<f64>> {
    let i = view.vehicle;
    let mut e = Vector3::zeros();
    for nb in &view.neighbors {
        let delta = formation
            .delta(i, nb.index)
            .ok_or(Error::MissingDelta { i, j: nb.index })?;
        e += nb.weight * (own_eta1 - nb.eta1 - delta);
    }
    if let Some(r) = &view.reference {
        e += view.pinning * (own_eta1 - r.position);
    }
    Ok(e)
}

/// Positions at which every consensus error vanishes for reference position
/// `eta_d`: the solution of `(L + B) eta = c + B 1 (x) eta_d`. When some
/// vehicles are pinned alongside their neighbours this is not the formation
/// slot layout around `eta_d`.
pub fn equilibrium_positions(
    topology: &FleetTopology,
    formation: &FormationSpec,
    reference: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    let n = topology.n();
    let lu = topology.laplacian_plus_pinning().lu();
    let mut rhs = DMatrix::<f64>::zeros(n, 3);
    for i in 0..n {
        let mut c = topology.pinning()[i] * reference;
        for j in topology.neighbors(i) {
            c += topology.weight(i, j)
                * formation.delta(i, j).ok_or(Error::MissingDelta { i, j })?;
        }
        rhs.row_mut(i).copy_from(&c.transpose());
    }
    let x = lu
        .solve(&rhs)
        .ok_or(Error::InvalidTopology("L + B is singular".into()))?;
    Ok((0..n)
        .map(|i| Vector3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)]))
        .collect())
}

/// Centralised form `(L + B)(eta - 1 (x) eta_d) - c`, with
/// `c_i = sum_j a_ij delta_ij`. Used to cross-check the distributed error.
pub fn stacked_consensus_error(
    topology: &FleetTopology,
    positions: &[Vector3<f64>],
    formation: &FormationSpec,
    reference: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    let n = topology.n();
    let big = topology
        .laplacian_plus_pinning()
        .kronecker(&DMatrix::<f64>::identity(3, 3));
    let rel = DVector::from_iterator(
        3 * n,
        positions
            .iter()
            .flat_map(|p| (p - reference).into_iter().copied().collect::<Vec<_>>()),
    );
    let prod = big * rel;
    (0..n)
        .map(|i| {
            let mut c = Vector3::zeros();
            for j in topology.neighbors(i) {
                c += topology.weight(i, j)
                    * formation.delta(i, j).ok_or(Error::MissingDelta { i, j })?;
            }
            Ok(Vector3::new(prod[3 * i], prod[3 * i + 1], prod[3 * i + 2]) - c)
        })
        .collect()
}

/// `rho = -K e + eta_d_dot` with diagonal `K`.
pub fn virtual_law(
    e: &Vector3<f64>,
    gains: &Vector3<f64>,
    ref_vel: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    if let Some(k) = gains.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::NonPositiveGain(*k));
    }
    Ok(ref_vel - gains.component_mul(e))
}

/// Virtual velocity and the speed/attitude commands that realise it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VirtualCommand {
    pub rho: Vector3<f64>,
    pub u_cmd: f64,
    pub theta_cmd: f64,
    pub psi_cmd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommandFlags {
    /// Speed below the floor; attitude commands held from the previous call.
    pub held: bool,
    /// Purely vertical request; pitch command clamped inside the open interval.
    pub clamped: bool,
}

/// Velocity produced by a speed/attitude command.
pub fn command_velocity(u_cmd: f64, theta_cmd: f64, psi_cmd: f64) -> Vector3<f64> {
    Vector3::new(
        u_cmd * theta_cmd.cos() * psi_cmd.cos(),
        u_cmd * theta_cmd.cos() * psi_cmd.sin(),
        -u_cmd * theta_cmd.sin(),
    )
}

/// Shift `angle` by multiples of 2 pi so that it lies within pi of `prev`.
pub fn unwrap_towards(angle: f64, prev: f64) -> f64 {
    let mut a = angle;
    if a - prev > PI {
        a -= TAU * ((a - prev - PI) / TAU).ceil();
    } else if a - prev < -PI {
        a += TAU * ((prev - a - PI) / TAU).ceil();
    }
    a
}

/// Speed and attitude commands from a virtual velocity.
///
/// Yaw is resolved on the full circle and unwrapped against `prev.psi_cmd`.
pub fn extract_commands(
    rho: &Vector3<f64>,
    prev: &VirtualCommand,
) -> (VirtualCommand, CommandFlags) {
    let mut flags = CommandFlags::default();
    let u_cmd = rho.norm();
    if u_cmd < SPEED_FLOOR {
        flags.held = true;
        return (
            VirtualCommand {
                rho: *rho,
                u_cmd: 0.0,
                ..*prev
            },
            flags,
        );
    }
    let mut theta_cmd = -(rho[2] / u_cmd).clamp(-1.0, 1.0).asin();
    if theta_cmd.abs() > ANGLE_CLAMP {
        theta_cmd = theta_cmd.signum() * ANGLE_CLAMP;
        flags.clamped = true;
    }
    let psi_raw = if rho[0] == 0.0 && rho[1] == 0.0 {
        prev.psi_cmd
    } else {
        rho[1].atan2(rho[0])
    };
    let psi_cmd = unwrap_towards(psi_raw, prev.psi_cmd);
    (
        VirtualCommand {
            rho: *rho,
            u_cmd,
            theta_cmd,
            psi_cmd,
        },
        flags,
    )
}
