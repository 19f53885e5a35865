//! Online optimisation of the diagonal virtual gains.
//!
//! At each sample instant vehicle `i` picks `K = diag(k)` minimising
//!
//! ```text
//! J(k) = e1' Q e1 + f' R1 f + sum_j p_j (k_j - k_prev_j)^2 + (rho - rho_prev)' R2 (rho - rho_prev)
//! rho  = -diag(k) e0 + eta_d_dot,     eta1 = eta0 + rho dt
//! e1   = sum_j a_ij (eta1 - eta_j - delta_ij) + b_i (eta1 - eta_d)
//! ```
//!
//! subject to `rho_lo <= rho <= rho_hi` and `k >= k_min`. `f` is the effort
//! term (see [`GainObjective`]). Because `rho_j` depends on `k_j` only, the
//! velocity box maps to an interval on each gain, and with diagonal weights
//! the problem splits into three scalar convex quadratics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::consensus::{extract_commands, CommandFlags, ReferenceSample, VirtualCommand};
use crate::graph::NeighborSnapshot;
use crate::{Error, Result};

/// Below this magnitude a consensus-error component is treated as having no
/// authority over the corresponding velocity.
pub const ZERO_ERROR: f64 = 1e-9;
const CD_TOLERANCE: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 500;

/// How the one-step prediction and the effort penalty are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainObjective {
    /// Neighbours and reference frozen at their sampled positions; the effort
    /// term penalises the whole virtual velocity `f = rho`.
    Literal,
    /// Neighbours and reference advance with the common reference velocity
    /// over the prediction step; the effort term penalises the corrective part
    /// `f = rho - eta_d_dot`. Zero consensus error is then a stationary point.
    #[default]
    Tracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub q: Matrix3<f64>,
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub p: Vector3<f64>,
    pub dt_sample: f64,
    pub rho_lo: Vector3<f64>,
    pub rho_hi: Vector3<f64>,
    pub k_min: f64,
    pub objective: GainObjective,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionTerm {
    pub weight: f64,
    pub eta1: Vector3<f64>,
    pub delta: Vector3<f64>,
}

/// One vehicle's gain problem at one sample instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GainQpProblem {
    pub e0: Vector3<f64>,
    pub eta0: Vector3<f64>,
    pub ref_pos: Vector3<f64>,
    pub ref_vel: Vector3<f64>,
    pub rho_prev: Vector3<f64>,
    pub k_prev: Vector3<f64>,
    pub q: Matrix3<f64>,
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub p: Vector3<f64>,
    pub dt_sample: f64,
    pub rho_lo: Vector3<f64>,
    pub rho_hi: Vector3<f64>,
    pub k_min: f64,
    pub neighbors: Vec<PredictionTerm>,
    pub pinning: f64,
    pub objective: GainObjective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Unconstrained minimiser was feasible on every axis.
    Optimal,
    /// At least one gain sits on its feasible-interval boundary.
    ClampedFeasible,
    /// The velocity box could not be met on some axis; that component was
    /// clamped instead.
    InfeasibleRepaired,
}

impl SolveStatus {
    pub fn label(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::ClampedFeasible => "clamped",
            SolveStatus::InfeasibleRepaired => "repaired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainQpSolution {
    pub k_star: Vector3<f64>,
    pub rho_star: Vector3<f64>,
    pub objective: f64,
    pub status: SolveStatus,
}

fn is_diagonal(m: &Matrix3<f64>) -> bool {
    (0..3).all(|i| (0..3).all(|j| i == j || m[(i, j)] == 0.0))
}

fn is_psd(m: &Matrix3<f64>) -> bool {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min() >= -1e-12
}

/// Feasible gain interval for one axis. When the box cannot be met the
/// variant carries the gain to fall back to.
#[derive(Debug, Clone, Copy, PartialEq)]
enum AxisFeasibility {
    Interval(f64, f64),
    Infeasible(f64),
}

impl GainQpProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidProblem(msg.to_string()));
        for m in [&self.q, &self.r1, &self.r2] {
            if m.iter().any(|x| !x.is_finite()) || !is_psd(m) {
                return bad("weights Q, R1, R2 must be finite and positive semidefinite");
            }
            if is_diagonal(m) && m.diagonal().iter().any(|x| *x < 0.0) {
                return bad("diagonal weights must be non-negative");
            }
        }
        if self.p.iter().any(|x| !(*x >= 0.0)) {
            return bad("change penalties p must be non-negative");
        }
        if !(self.dt_sample > 0.0) {
            return bad("sampling period must be positive");
        }
        if !(self.k_min > 0.0) {
            return bad("gain floor k_min must be positive");
        }
        if (0..3).any(|j| !(self.rho_lo[j] < self.rho_hi[j])) {
            return bad("velocity box must satisfy rho_lo < rho_hi componentwise");
        }
        let vectors = [
            self.e0,
            self.eta0,
            self.ref_pos,
            self.ref_vel,
            self.rho_prev,
            self.k_prev,
        ];
        if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return bad("problem data must be finite");
        }
        Ok(())
    }

    /// Virtual velocity produced by gains `k`.
    pub fn rho(&self, k: &Vector3<f64>) -> Vector3<f64> {
        self.ref_vel - k.component_mul(&self.e0)
    }

    fn drift(&self) -> Vector3<f64> {
        match self.objective {
            GainObjective::Literal => Vector3::zeros(),
            GainObjective::Tracking => self.ref_vel * self.dt_sample,
        }
    }

    fn total_weight(&self) -> f64 {
        self.neighbors.iter().map(|n| n.weight).sum::<f64>() + self.pinning
    }

    /// One-step-ahead consensus error for a candidate virtual velocity.
    pub fn predicted_error(&self, rho: &Vector3<f64>) -> Vector3<f64> {
        let eta1 = self.eta0 + rho * self.dt_sample;
        let drift = self.drift();
        let mut e = self.pinning * (eta1 - self.ref_pos - drift);
        for n in &self.neighbors {
            e += n.weight * (eta1 - n.eta1 - drift - n.delta);
        }
        e
    }

    fn effort(&self, rho: &Vector3<f64>) -> Vector3<f64> {
        match self.objective {
            GainObjective::Literal => *rho,
            GainObjective::Tracking => rho - self.ref_vel,
        }
    }

    pub fn objective_value(&self, k: &Vector3<f64>) -> f64 {
        let rho = self.rho(k);
        let e1 = self.predicted_error(&rho);
        let f = self.effort(&rho);
        let dr = rho - self.rho_prev;
        let dk = k - self.k_prev;
        (e1.transpose() * self.q * e1)[0]
            + (f.transpose() * self.r1 * f)[0]
            + (dr.transpose() * self.r2 * dr)[0]
            + self.p.component_mul(&dk).dot(&dk)
    }

    fn feasibility(&self, axis: usize) -> AxisFeasibility {
        let e = self.e0[axis];
        let v = self.ref_vel[axis];
        let (lo, hi) = (self.rho_lo[axis], self.rho_hi[axis]);
        let hold = self.k_prev[axis].max(self.k_min);
        let (k_lo, k_hi) = if e == 0.0 {
            if lo <= v && v <= hi {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                return AxisFeasibility::Infeasible(hold);
            }
        } else if e > 0.0 {
            ((v - hi) / e, (v - lo) / e)
        } else {
            ((v - lo) / e, (v - hi) / e)
        };
        let k_lo = k_lo.max(self.k_min);
        if k_lo > k_hi {
            // With no error authority the gain is irrelevant, so hold it;
            // otherwise the floor gets rho closest to the box.
            AxisFeasibility::Infeasible(if e.abs() < ZERO_ERROR {
                hold
            } else {
                self.k_min
            })
        } else {
            AxisFeasibility::Interval(k_lo, k_hi)
        }
    }

    /// Affine pieces `(A + B k)` of the three residuals on one axis:
    /// predicted error, effort, and velocity change.
    fn axis_affine(&self, axis: usize) -> [(f64, f64); 3] {
        let e = self.e0[axis];
        let v = self.ref_vel[axis];
        let rho0 = self.rho(&Vector3::zeros());
        let e1_at_zero = self.predicted_error(&rho0)[axis];
        let slope = -self.total_weight() * self.dt_sample * e;
        let f0 = self.effort(&rho0)[axis];
        [(e1_at_zero, slope), (f0, -e), (v - self.rho_prev[axis], -e)]
    }
}

/// Sample everything the gain problem needs at the current instant.
///
/// `reference` carries the mission velocity, which every vehicle knows; its
/// position enters only through the pinning term of pinned vehicles.
pub fn build_problem(
    view: &NeighborSnapshot,
    own_eta1: &Vector3<f64>,
    e0: &Vector3<f64>,
    reference: &ReferenceSample,
    rho_prev: &Vector3<f64>,
    k_prev: &Vector3<f64>,
    config: &OptimizerConfig,
    delta: impl Fn(usize) -> Option<Vector3<f64>>,
) -> Result<GainQpProblem> {
    let neighbors = view
        .neighbors
        .iter()
        .map(|n| {
            let d = delta(n.index).ok_or(Error::MissingDelta {
                i: view.vehicle,
                j: n.index,
            })?;
            Ok(PredictionTerm {
                weight: n.weight,
                eta1: n.eta1,
                delta: d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ref_pos = view
        .reference
        .map(|r| r.position)
        .unwrap_or(reference.position);
    Ok(GainQpProblem {
        e0: *e0,
        eta0: *own_eta1,
        ref_pos,
        ref_vel: reference.velocity,
        rho_prev: *rho_prev,
        k_prev: *k_prev,
        q: config.q,
        r1: config.r1,
        r2: config.r2,
        p: config.p,
        dt_sample: config.dt_sample,
        rho_lo: config.rho_lo,
        rho_hi: config.rho_hi,
        k_min: config.k_min,
        neighbors,
        pinning: view.pinning,
        objective: config.objective,
    })
}

/// Solve the gain problem. Diagonal weights take the closed-form path;
/// anything else falls back to projected coordinate descent.
pub fn solve(problem: &GainQpProblem) -> Result<GainQpSolution> {
    problem.validate()?;
    let feas: [AxisFeasibility; 3] = std::array::from_fn(|j| problem.feasibility(j));
    let separable = is_diagonal(&problem.q) && is_diagonal(&problem.r1) && is_diagonal(&problem.r2);
    let (k_star, mut clamped) = if separable {
        solve_separable(problem, &feas)
    } else {
        solve_coordinate_descent(problem, &feas)
    };

    let mut rho_star = problem.rho(&k_star);
    let mut repaired = false;
    for j in 0..3 {
        let (lo, hi) = (problem.rho_lo[j], problem.rho_hi[j]);
        match feas[j] {
            AxisFeasibility::Infeasible(_) => {
                repaired = true;
                rho_star[j] = rho_star[j].clamp(lo, hi);
            }
            AxisFeasibility::Interval(..) => {
                // Interval endpoints are computed in floating point; pull
                // boundary solutions back onto the box exactly.
                if rho_star[j] < lo || rho_star[j] > hi {
                    rho_star[j] = rho_star[j].clamp(lo, hi);
                    clamped = true;
                }
            }
        }
    }
    let status = if repaired {
        SolveStatus::InfeasibleRepaired
    } else if clamped {
        SolveStatus::ClampedFeasible
    } else {
        SolveStatus::Optimal
    };
    Ok(GainQpSolution {
        k_star,
        rho_star,
        objective: problem.objective_value(&k_star),
        status,
    })
}

fn clamp_to(feas: AxisFeasibility, k: f64) -> (f64, bool) {
    match feas {
        AxisFeasibility::Interval(lo, hi) => {
            let c = k.clamp(lo, hi);
            (c, c != k)
        }
        AxisFeasibility::Infeasible(fallback) => (fallback, false),
    }
}

fn solve_separable(p: &GainQpProblem, feas: &[AxisFeasibility; 3]) -> (Vector3<f64>, bool) {
    let mut k = Vector3::zeros();
    let mut clamped = false;
    for j in 0..3 {
        let weights = [p.q[(j, j)], p.r1[(j, j)], p.r2[(j, j)]];
        let mut quad = p.p[j];
        let mut lin = -p.p[j] * p.k_prev[j];
        for ((a, b), w) in p.axis_affine(j).into_iter().zip(weights) {
            quad += w * b * b;
            lin += w * a * b;
        }
        let unconstrained = if quad > 0.0 { -lin / quad } else { p.k_prev[j] };
        let (kj, c) = clamp_to(feas[j], unconstrained);
        k[j] = kj;
        clamped |= c;
    }
    (k, clamped)
}

fn solve_coordinate_descent(
    p: &GainQpProblem,
    feas: &[AxisFeasibility; 3],
) -> (Vector3<f64>, bool) {
    let q = (p.q + p.q.transpose()) * 0.5;
    let r1 = (p.r1 + p.r1.transpose()) * 0.5;
    let r2 = (p.r2 + p.r2.transpose()) * 0.5;
    let affine: [[(f64, f64); 3]; 3] = std::array::from_fn(|j| p.axis_affine(j));
    let residual = |term: usize, k: &Vector3<f64>| {
        Vector3::from_fn(|j, _| affine[j][term].0 + affine[j][term].1 * k[j])
    };
    let slopes = |term: usize| Vector3::from_fn(|j, _| affine[j][term].1);

    let mut k = Vector3::from_fn(|j, _| clamp_to(feas[j], p.k_prev[j]).0);
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for j in 0..3 {
            let mut grad = p.p[j] * (k[j] - p.k_prev[j]);
            let mut curv = p.p[j];
            for (term, w) in [(0, &q), (1, &r1), (2, &r2)] {
                let r = residual(term, &k);
                let b = slopes(term)[j];
                grad += b * (w * r)[j];
                curv += b * b * w[(j, j)];
            }
            if curv <= 0.0 {
                continue;
            }
            let (next, _) = clamp_to(feas[j], k[j] - grad / curv);
            max_step = max_step.max((next - k[j]).abs());
            k[j] = next;
        }
        if max_step < CD_TOLERANCE {
            break;
        }
    }
    let clamped = (0..3)
        .any(|j| matches!(feas[j], AxisFeasibility::Interval(lo, hi) if k[j] == lo || k[j] == hi));
    (k, clamped)
}

/// Turn an optimised virtual velocity into speed/attitude commands.
pub fn apply_solution(
    sol: &GainQpSolution,
    prev: &VirtualCommand,
) -> (VirtualCommand, CommandFlags) {
    extract_commands(&sol.rho_star, prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::command_velocity;
    use proptest::prelude::*;

    pub(crate) fn base_problem() -> GainQpProblem {
        // Vehicle 1 at t = 0 with its single neighbour.
        GainQpProblem {
            e0: Vector3::new(-4.2, -1.0, -5.0),
            eta0: Vector3::zeros(),
            ref_pos: Vector3::new(5.0, 1.0, 5.0),
            ref_vel: Vector3::new(0.7, 0.1, 0.0),
            rho_prev: Vector3::new(1.96, 0.4, 1.5),
            k_prev: Vector3::repeat(0.3),
            q: Matrix3::from_diagonal_element(10.0),
            r1: Matrix3::identity(),
            r2: Matrix3::identity(),
            p: Vector3::repeat(0.1),
            dt_sample: 0.1,
            rho_lo: Vector3::repeat(-1.5),
            rho_hi: Vector3::repeat(1.5),
            k_min: 1e-3,
            neighbors: vec![PredictionTerm {
                weight: 0.8,
                eta1: Vector3::new(-1.0, -10.0, 0.0),
                delta: Vector3::new(0.0, 10.0, 0.0),
            }],
            pinning: 1.0,
            objective: GainObjective::Tracking,
        }
    }

    #[test]
    fn predicted_error_at_zero_step_is_current_error() {
        let mut p = base_problem();
        p.dt_sample = 1e-300;
        let e = p.predicted_error(&Vector3::zeros());
        assert!((e - p.e0).amax() < 1e-12);
    }

    #[test]
    fn zero_error_keeps_previous_gains() {
        for objective in [GainObjective::Literal, GainObjective::Tracking] {
            let mut p = base_problem();
            p.objective = objective;
            p.e0 = Vector3::zeros();
            p.k_prev = Vector3::new(0.5, 1e-4, 2.0);
            let s = solve(&p).unwrap();
            assert_eq!(s.k_star, Vector3::new(0.5, 1e-3, 2.0));
            assert_eq!(s.rho_star, p.ref_vel);
        }
    }

    #[test]
    fn box_interval_example() {
        let mut p = base_problem();
        p.e0 = Vector3::new(1.0, 0.0, 0.0);
        p.rho_lo = Vector3::repeat(-1.0);
        p.rho_hi = Vector3::repeat(1.0);
        let s = solve(&p).unwrap();
        assert!(s.k_star[0] >= p.k_min && s.k_star[0] <= 1.7 + 1e-12);
        assert!((-1.0..=1.0).contains(&s.rho_star[0]));
        assert!((s.rho_star - p.rho(&s.k_star)).amax() < 1e-12);
    }

    #[test]
    fn startup_problem_hits_the_box() {
        let s = solve(&base_problem()).unwrap();
        assert_eq!(s.status, SolveStatus::ClampedFeasible);
        assert!(s.rho_star.iter().all(|r| r.abs() <= 1.5));
        // x and z are limited by the box: rho = 0.7 + 4.2 k <= 1.5.
        assert!((s.k_star[0] - 0.8 / 4.2).abs() < 1e-12);
        assert_eq!(s.rho_star[0], 1.5);
    }

    #[test]
    fn infeasible_axis_is_repaired() {
        let mut p = base_problem();
        p.e0 = Vector3::new(0.0, -1.0, -1.0);
        p.ref_vel = Vector3::new(2.0, 0.1, 0.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::InfeasibleRepaired);
        assert_eq!(s.rho_star[0], 1.5);
        assert!(s.k_star.iter().all(|k| *k >= p.k_min));

        // k_min alone already pushes rho past the box.
        let mut p = base_problem();
        p.e0 = Vector3::new(-1e4, 0.0, 0.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::InfeasibleRepaired);
        assert_eq!(s.k_star[0], p.k_min);
        assert_eq!(s.rho_star[0], 1.5);
    }

    #[test]
    fn invalid_problems_rejected() {
        let mut p = base_problem();
        p.k_min = 0.0;
        assert!(solve(&p).is_err());
        let mut p = base_problem();
        p.rho_lo[1] = 2.0;
        assert!(solve(&p).is_err());
        let mut p = base_problem();
        p.q[(0, 0)] = -1.0;
        assert!(solve(&p).is_err());
        let mut p = base_problem();
        p.dt_sample = 0.0;
        assert!(solve(&p).is_err());
    }

    #[test]
    fn coordinate_descent_matches_closed_form() {
        for objective in [GainObjective::Literal, GainObjective::Tracking] {
            let mut p = base_problem();
            p.objective = objective;
            p.e0 = Vector3::new(0.4, -0.3, 0.2);
            let closed = solve(&p).unwrap();
            let cd = solve_coordinate_descent(&p, &std::array::from_fn(|j| p.feasibility(j))).0;
            assert!(
                (cd - closed.k_star).amax() < 1e-8,
                "{cd} vs {}",
                closed.k_star
            );
        }
    }

    #[test]
    fn coordinate_descent_on_coupled_weights_beats_perturbations() {
        let mut p = base_problem();
        p.e0 = Vector3::new(0.4, -0.3, 0.2);
        p.q = Matrix3::new(10.0, 2.0, 0.5, 2.0, 8.0, 1.0, 0.5, 1.0, 6.0);
        p.r1 = Matrix3::new(1.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.0);
        let s = solve(&p).unwrap();
        let best = s.objective;
        for dx in [-1e-3, 0.0, 1e-3] {
            for dy in [-1e-3, 0.0, 1e-3] {
                for dz in [-1e-3, 0.0, 1e-3] {
                    let k = s.k_star + Vector3::new(dx, dy, dz);
                    let feasible = (0..3).all(|j| {
                        let r = p.rho(&k)[j];
                        k[j] >= p.k_min && r >= p.rho_lo[j] && r <= p.rho_hi[j]
                    });
                    if feasible {
                        assert!(p.objective_value(&k) >= best - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn apply_solution_round_trips() {
        let sol = GainQpSolution {
            k_star: Vector3::repeat(1.0),
            rho_star: Vector3::new(1.0, 0.0, 0.0),
            objective: 0.0,
            status: SolveStatus::Optimal,
        };
        let (c, _) = apply_solution(&sol, &VirtualCommand::default());
        assert_eq!((c.u_cmd, c.theta_cmd, c.psi_cmd), (1.0, 0.0, 0.0));

        let s = solve(&base_problem()).unwrap();
        let (c, f) = apply_solution(&s, &VirtualCommand::default());
        assert!(!f.held && !f.clamped);
        assert!((command_velocity(c.u_cmd, c.theta_cmd, c.psi_cmd) - s.rho_star).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn solution_respects_constraints(ex in -10.0f64..10.0, ey in -10.0f64..10.0, ez in -10.0f64..10.0,
                                         kx in 0.01f64..5.0, literal in any::<bool>()) {
            let mut p = base_problem();
            p.e0 = Vector3::new(ex, ey, ez);
            p.k_prev = Vector3::new(kx, 0.3, 1.0);
            p.objective = if literal { GainObjective::Literal } else { GainObjective::Tracking };
            let s = solve(&p).unwrap();
            prop_assert!(s.k_star.iter().all(|k| *k >= p.k_min));
            // -diag(k) is negative definite.
            prop_assert!((-Matrix3::from_diagonal(&s.k_star)).symmetric_eigenvalues().max() < 0.0);
            if s.status != SolveStatus::InfeasibleRepaired {
                for j in 0..3 {
                    prop_assert!(p.rho_lo[j] <= s.rho_star[j] && s.rho_star[j] <= p.rho_hi[j]);
                }
                prop_assert!((s.rho_star - p.rho(&s.k_star)).amax() < 1e-12);
            }
        }
    }
}
