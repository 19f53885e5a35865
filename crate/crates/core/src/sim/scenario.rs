//! Scenario files: one TOML document fully determines a run.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::consensus::{FormationSpec, LinearReference};
use crate::controller::shunting::ShuntingParams;
use crate::controller::{CommandShaping, ControllerGains, ControllerVariant, SmcParams};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::graph::FleetTopology;
use crate::optimizer::{GainObjective, OptimizerConfig};
use crate::{Error, Result};

use super::disturbance::{ChannelSet, DisturbanceProfile};

fn default_margin() -> f64 {
    crate::dynamics::ATTITUDE_MARGIN
}

fn default_settling() -> f64 {
    0.02
}

fn default_startup() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub dt_sample: f64,
    pub t_final: f64,
    pub controller: ControllerVariant,
    #[serde(default = "default_margin")]
    pub attitude_margin: f64,
    /// Settling threshold as a fraction of the initial error norm.
    #[serde(default = "default_settling")]
    pub settling_fraction: f64,
    /// Length of the start-up window used for peak-effort metrics.
    #[serde(default = "default_startup")]
    pub startup_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    /// `[x, y, z, theta, psi]`
    pub pose: [f64; 5],
    /// `[u, v, w, q, r]`
    pub velocity: [f64; 5],
    /// Overrides the fleet-wide parameters.
    #[serde(default)]
    pub params: Option<VehicleParams>,
    /// Overrides the fleet-wide disturbance channels.
    #[serde(default)]
    pub disturbance: Option<ChannelSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub adjacency: Vec<Vec<f64>>,
    pub pinning: Vec<f64>,
}

/// `delta = eta_from - eta_to`, vehicles numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetSection {
    pub from: usize,
    pub to: usize,
    pub delta: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub origin: [f64; 3],
    pub velocity: [f64; 3],
}

/// Virtual-law gains `K1` (initial values when optimised) and rate-loop gains `K2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantGainsSection {
    pub k1: [f64; 3],
    pub k2: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttitudeSection {
    pub k_theta: f64,
    pub k_psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcSection {
    pub boundary_layer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    /// Diagonals of the weight matrices.
    pub q: [f64; 3],
    pub r1: [f64; 3],
    pub r2: [f64; 3],
    pub p: [f64; 3],
    pub rho_lo: [f64; 3],
    pub rho_hi: [f64; 3],
    pub k_min: f64,
    #[serde(default)]
    pub objective: GainObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub tau_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub enabled: bool,
    pub cap: f64,
    pub amplitude: [f64; 5],
    pub frequency: [f64; 5],
    pub phase: [f64; 5],
}

impl DisturbanceSection {
    pub fn channels(&self) -> ChannelSet {
        ChannelSet {
            amplitude: self.amplitude,
            frequency: self.frequency,
            phase: self.phase,
        }
    }
}

/// Raw, unvalidated contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub simulation: SimulationSection,
    pub vehicle: VehicleParams,
    pub vehicles: Vec<VehicleSection>,
    pub topology: TopologySection,
    pub offsets: Vec<OffsetSection>,
    pub reference: ReferenceSection,
    pub gains: BTreeMap<ControllerVariant, VariantGainsSection>,
    pub attitude: AttitudeSection,
    /// Command limits ahead of the inner loop; absent means none.
    #[serde(default)]
    pub guidance: CommandShaping,
    pub shunting: ShuntingParams,
    pub smc: SmcSection,
    pub optimizer: OptimizerSection,
    pub estimator: EstimatorSection,
    pub disturbance: Option<DisturbanceSection>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidScenario(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Gains in force for one controller variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantGains {
    pub k1: Vector3<f64>,
    pub inner: ControllerGains,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dt: f64,
    pub dt_sample: f64,
    pub t_final: f64,
    pub variant: ControllerVariant,
    pub attitude_margin: f64,
    pub settling_fraction: f64,
    pub startup_window: f64,
    pub params: Vec<VehicleParams>,
    pub initial: Vec<VehicleState>,
    pub topology: FleetTopology,
    pub formation: FormationSpec,
    pub gains: BTreeMap<ControllerVariant, VariantGains>,
    pub optimizer: OptimizerConfig,
    pub tau_f: f64,
    pub shaping: CommandShaping,
    pub disturbance: DisturbanceProfile,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidScenario(msg.into()))
}

fn check_multiple(value: f64, step: f64, what: &str) -> Result<usize> {
    let ratio = value / step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return invalid(format!(
            "{what} ({value}) must be an integer multiple of the step ({step})"
        ));
    }
    Ok(n as usize)
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&ScenarioFile::load(path)?)
    }

    pub fn from_file(f: &ScenarioFile) -> Result<Self> {
        let sim = &f.simulation;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(Error::InvalidTimeStep(sim.dt));
        }
        if !(sim.dt_sample > 0.0) {
            return invalid("dt_sample must be positive");
        }
        check_multiple(sim.dt_sample, sim.dt, "dt_sample")?;
        if !(sim.t_final >= 0.0 && sim.t_final.is_finite()) {
            return invalid("t_final must be finite and non-negative");
        }
        check_multiple(sim.t_final, sim.dt, "t_final")?;
        if !(sim.attitude_margin > 0.0 && sim.attitude_margin < 1.0) {
            return invalid("attitude_margin must lie in (0, 1)");
        }
        if !(sim.settling_fraction > 0.0 && sim.settling_fraction < 1.0) {
            return invalid("settling_fraction must lie in (0, 1)");
        }
        if !(sim.startup_window > 0.0) {
            return invalid("startup_window must be positive");
        }

        let n = f.vehicles.len();
        if n == 0 {
            return invalid("at least one vehicle is required");
        }
        let topology = FleetTopology::from_rows(&f.topology.adjacency, &f.topology.pinning)?;
        if topology.n() != n {
            return invalid(format!(
                "topology describes {} vehicles but {n} are listed",
                topology.n()
            ));
        }
        topology.validate()?;

        let mut params = Vec::with_capacity(n);
        let mut initial = Vec::with_capacity(n);
        for (i, v) in f.vehicles.iter().enumerate() {
            let p = v.params.clone().unwrap_or_else(|| f.vehicle.clone());
            p.validate()?;
            params.push(p);
            let s = VehicleState::from_pose_velocity(v.pose, v.velocity);
            if !s.is_finite() {
                return invalid(format!("vehicle {} initial state is not finite", i + 1));
            }
            if s.theta().cos() <= sim.attitude_margin {
                return invalid(format!(
                    "vehicle {} initial pitch must satisfy |theta| < pi/2",
                    i + 1
                ));
            }
            initial.push(s);
        }

        let mut offsets = BTreeMap::new();
        for o in &f.offsets {
            if o.from == 0 || o.to == 0 || o.from > n || o.to > n {
                return invalid(format!(
                    "offset ({}, {}) refers to a vehicle outside 1..={n}",
                    o.from, o.to
                ));
            }
            if offsets
                .insert((o.from - 1, o.to - 1), Vector3::from(o.delta))
                .is_some()
            {
                return invalid(format!("offset ({}, {}) given twice", o.from, o.to));
            }
        }
        let reference = LinearReference {
            origin: Vector3::from(f.reference.origin),
            velocity: Vector3::from(f.reference.velocity),
        };
        let formation = FormationSpec::new(offsets, Arc::new(reference))?;
        formation.check_edges(&topology)?;

        let mut gains = BTreeMap::new();
        for (&v, g) in &f.gains {
            let smc = SmcParams {
                k: g.k2,
                boundary_layer: f.smc.boundary_layer,
            };
            let inner = ControllerGains {
                k_theta: f.attitude.k_theta,
                k_psi: f.attitude.k_psi,
                k_u: g.k2[0],
                k_q: g.k2[1],
                k_r: g.k2[2],
                shunting: f.shunting,
                smc,
            };
            inner.validate()?;
            if g.k1.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                return Err(Error::NonPositiveGain(
                    g.k1.iter().copied().fold(f64::INFINITY, f64::min),
                ));
            }
            gains.insert(
                v,
                VariantGains {
                    k1: Vector3::from(g.k1),
                    inner,
                },
            );
        }
        if !gains.contains_key(&sim.controller) {
            return invalid(format!(
                "no gains configured for controller {}",
                sim.controller
            ));
        }

        let o = &f.optimizer;
        let optimizer = OptimizerConfig {
            q: Matrix3::from_diagonal(&Vector3::from(o.q)),
            r1: Matrix3::from_diagonal(&Vector3::from(o.r1)),
            r2: Matrix3::from_diagonal(&Vector3::from(o.r2)),
            p: Vector3::from(o.p),
            dt_sample: sim.dt_sample,
            rho_lo: Vector3::from(o.rho_lo),
            rho_hi: Vector3::from(o.rho_hi),
            k_min: o.k_min,
            objective: o.objective,
        };
        validate_optimizer(&optimizer, &f.reference.velocity)?;

        f.guidance.validate()?;
        if !(f.estimator.tau_f >= 2.0 * sim.dt) {
            return invalid("estimator tau_f must be at least twice dt");
        }

        let disturbance = match &f.disturbance {
            None => DisturbanceProfile::off(n),
            Some(d) => {
                let vehicles: Vec<ChannelSet> = f
                    .vehicles
                    .iter()
                    .map(|v| v.disturbance.unwrap_or(d.channels()))
                    .collect();
                if !(d.cap >= 0.0) || vehicles.iter().any(|c| !c.is_finite()) {
                    return invalid("disturbance profile must be finite with a non-negative cap");
                }
                if d.enabled {
                    let bound = vehicles.iter().map(|c| c.norm_bound()).fold(0.0, f64::max);
                    if bound > d.cap {
                        return Err(Error::DisturbanceCapExceeded { bound, cap: d.cap });
                    }
                }
                DisturbanceProfile {
                    enabled: d.enabled,
                    cap: d.cap,
                    vehicles,
                }
            }
        };

        Ok(Scenario {
            dt: sim.dt,
            dt_sample: sim.dt_sample,
            t_final: sim.t_final,
            variant: sim.controller,
            attitude_margin: sim.attitude_margin,
            settling_fraction: sim.settling_fraction,
            startup_window: sim.startup_window,
            params,
            initial,
            topology,
            formation,
            gains,
            optimizer,
            tau_f: f.estimator.tau_f,
            shaping: f.guidance,
            disturbance,
        })
    }

    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn steps_per_sample(&self) -> usize {
        (self.dt_sample / self.dt).round() as usize
    }

    pub fn active_gains(&self) -> &VariantGains {
        &self.gains[&self.variant]
    }

    /// Same scenario with another controller variant selected.
    pub fn with_variant(&self, variant: ControllerVariant) -> Result<Self> {
        if !self.gains.contains_key(&variant) {
            return invalid(format!("no gains configured for controller {variant}"));
        }
        Ok(Self {
            variant,
            ..self.clone()
        })
    }
}

fn validate_optimizer(o: &OptimizerConfig, ref_vel: &[f64; 3]) -> Result<()> {
    let diag = [o.q.diagonal(), o.r1.diagonal(), o.r2.diagonal(), o.p];
    if diag
        .iter()
        .any(|d| d.iter().any(|x| !(*x >= 0.0 && x.is_finite())))
    {
        return invalid("optimizer weights must be finite and non-negative");
    }
    if !(o.k_min > 0.0) {
        return invalid("optimizer k_min must be positive");
    }
    for j in 0..3 {
        if !(o.rho_lo[j] < o.rho_hi[j]) {
            return invalid("optimizer velocity box must satisfy rho_lo < rho_hi");
        }
        if !(o.rho_lo[j] < ref_vel[j] && ref_vel[j] < o.rho_hi[j]) {
            return invalid("reference velocity must lie strictly inside the velocity box");
        }
    }
    Ok(())
}
