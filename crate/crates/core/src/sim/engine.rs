//! Closed-loop simulation of the fleet.
//!
//! Every integrator step all vehicles read one immutable snapshot of the
//! fleet (the state at the start of the step), evaluate their controllers
//! from their own neighbour view, and then the whole fleet is integrated
//! with the inputs held. Gains of the optimised variants are re-solved only
//! at sample instants and held in between.

use nalgebra::Vector3;

use crate::consensus::{
    consensus_error, extract_commands, virtual_law, ReferenceSample, VirtualCommand,
};
use crate::controller::{InnerController, InnerOutput};
use crate::dynamics::{integrate_step, VehicleState};
use crate::graph::NeighborSnapshot;
use crate::optimizer::{build_problem, solve, SolveStatus};
use crate::Error;

use super::disturbance::disturbance_at;
use super::log::{SimLog, SimLogRecord, VehicleRecord};
use super::scenario::Scenario;

/// A run stopped by a guard. Carries everything logged up to that point.
#[derive(Debug, thiserror::Error)]
#[error("run aborted at t = {t:.3} s{loc}: {source}", loc = vehicle_label(.vehicle))]
pub struct RunError {
    pub source: Error,
    pub vehicle: Option<usize>,
    pub t: f64,
    pub state: Option<VehicleState>,
    pub log: Box<SimLog>,
}

fn vehicle_label(v: &Option<usize>) -> String {
    v.map(|i| format!(" (vehicle {})", i + 1))
        .unwrap_or_default()
}

/// Mutable per-vehicle controller state. Owned by exactly one vehicle.
#[derive(Debug, Clone)]
pub struct VehicleContext {
    pub inner: InnerController,
    /// Virtual gains currently in force.
    pub k: Vector3<f64>,
    pub last_cmd: Option<VirtualCommand>,
    pub status: Option<SolveStatus>,
}

/// Everything one vehicle produced in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub e: Vector3<f64>,
    pub cmd: VirtualCommand,
    pub inner: InnerOutput,
    pub box_violation: bool,
}

impl VehicleContext {
    pub fn new(scn: &Scenario) -> Result<Self, Error> {
        let g = scn.active_gains();
        Ok(Self {
            inner: InnerController::new(
                scn.variant,
                g.inner,
                scn.shaping,
                scn.tau_f,
                scn.dt,
                scn.attitude_margin,
            )?,
            k: g.k1,
            last_cmd: None,
            status: None,
        })
    }
}

fn clamp_box(rho: Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|j, _| rho[j].clamp(lo[j], hi[j]))
}

/// One control evaluation for vehicle `view.vehicle`, using only its local
/// view, its own state and the mission velocity.
pub fn control_vehicle(
    scn: &Scenario,
    ctx: &mut VehicleContext,
    view: &NeighborSnapshot,
    own: &VehicleState,
    reference: &ReferenceSample,
    sample_instant: bool,
) -> Result<TickOutput, Error> {
    let i = view.vehicle;
    let e = consensus_error(view, &own.eta1, &scn.formation)?;
    let opt = &scn.optimizer;
    let optimized = scn.variant.optimizes_gains();

    let prev = match ctx.last_cmd {
        Some(c) => c,
        None => {
            let rho = virtual_law(&e, &ctx.k, &reference.velocity)?;
            extract_commands(&rho, &VirtualCommand::default()).0
        }
    };
    let rho = if optimized && sample_instant {
        let problem = build_problem(
            view,
            &own.eta1,
            &e,
            reference,
            &prev.rho,
            &ctx.k,
            opt,
            |j| scn.formation.delta(i, j),
        )?;
        let sol = solve(&problem)?;
        ctx.k = sol.k_star;
        ctx.status = Some(sol.status);
        sol.rho_star
    } else {
        let rho = virtual_law(&e, &ctx.k, &reference.velocity)?;
        // Between samples the held gains must not push the command outside
        // the box the optimiser enforced at the sample.
        if optimized {
            clamp_box(rho, &opt.rho_lo, &opt.rho_hi)
        } else {
            rho
        }
    };
    let box_violation = (0..3).any(|j| rho[j] < opt.rho_lo[j] || rho[j] > opt.rho_hi[j]);
    let (cmd, _) = extract_commands(&rho, &prev);
    ctx.last_cmd = Some(cmd);
    let inner = ctx.inner.step(own, &scn.params[i], &cmd)?;
    Ok(TickOutput {
        e,
        cmd,
        inner,
        box_violation,
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    tau_peak: [f64; 3],
    violations: usize,
}

fn make_record(
    state: &VehicleState,
    ctx: &VehicleContext,
    out: &TickOutput,
    acc: &Accumulator,
) -> VehicleRecord {
    VehicleRecord {
        eta1: state.eta1,
        eta2: state.eta2,
        nu1: state.nu1,
        nu2: state.nu2,
        e: out.e,
        e_norm: out.e.norm(),
        u_cmd: out.cmd.u_cmd,
        theta_cmd: out.cmd.theta_cmd,
        psi_cmd: out.cmd.psi_cmd,
        rho: out.cmd.rho,
        k: ctx.k,
        tau: out.inner.tau.as_array(),
        tau_peak: acc.tau_peak,
        shunting: out.inner.shunting.x,
        z: out.inner.errors.z(),
        box_violations: acc.violations,
        status: ctx.status,
    }
}

/// Run the scenario to `t_final`. Identical scenarios give bit-identical logs.
pub fn run(scn: &Scenario) -> Result<SimLog, RunError> {
    let n = scn.n();
    let mut log = SimLog {
        variant: scn.variant,
        n_vehicles: n,
        dt: scn.dt,
        dt_sample: scn.dt_sample,
        t_final: scn.t_final,
        startup_window: scn.startup_window,
        settling_fraction: scn.settling_fraction,
        rho_lo: scn.optimizer.rho_lo,
        rho_hi: scn.optimizer.rho_hi,
        records: Vec::with_capacity(scn.steps() / scn.steps_per_sample() + 1),
    };
    let fail = |source: Error,
                vehicle: Option<usize>,
                t: f64,
                state: Option<VehicleState>,
                log: SimLog| RunError {
        source,
        vehicle,
        t,
        state,
        log: Box::new(log),
    };

    let mut ctxs = Vec::with_capacity(n);
    for _ in 0..n {
        match VehicleContext::new(scn) {
            Ok(c) => ctxs.push(c),
            Err(e) => return Err(fail(e, None, 0.0, None, log)),
        }
    }
    let mut states = scn.initial.clone();
    let mut acc = vec![Accumulator::default(); n];
    let n_steps = scn.steps();
    let sps = scn.steps_per_sample();
    let reference = scn.formation.reference();

    for s in 0..=n_steps {
        let t = s as f64 * scn.dt;
        let sample_instant = s % sps == 0;
        let snapshot: Vec<Vector3<f64>> = states.iter().map(|x| x.eta1).collect();
        let ref_now = reference.sample(t);

        let mut outputs = Vec::with_capacity(n);
        for i in 0..n {
            let out = scn
                .topology
                .neighbor_view(i, &snapshot, &ref_now)
                .and_then(|view| {
                    control_vehicle(
                        scn,
                        &mut ctxs[i],
                        &view,
                        &states[i],
                        &ref_now,
                        sample_instant,
                    )
                });
            match out {
                Ok(o) => {
                    let a = &mut acc[i];
                    for (p, tau) in a.tau_peak.iter_mut().zip(o.inner.tau.as_array()) {
                        *p = p.max(tau.abs());
                    }
                    a.violations += o.box_violation as usize;
                    outputs.push(o);
                }
                Err(e) => return Err(fail(e, Some(i), t, Some(states[i]), log)),
            }
        }

        if sample_instant {
            let vehicles = (0..n)
                .map(|i| make_record(&states[i], &ctxs[i], &outputs[i], &acc[i]))
                .collect();
            log.records.push(SimLogRecord { t, vehicles });
            acc.iter_mut().for_each(|a| *a = Accumulator::default());
        }
        if s == n_steps {
            break;
        }

        for i in 0..n {
            let d = |ts: f64| disturbance_at(&scn.disturbance, i, ts);
            match integrate_step(
                &states[i],
                &scn.params[i],
                &outputs[i].inner.tau,
                d,
                t,
                scn.dt,
                scn.attitude_margin,
            ) {
                Ok(next) => states[i] = next,
                Err(e) => return Err(fail(e, Some(i), t, Some(states[i]), log)),
            }
        }
    }
    Ok(log)
}
