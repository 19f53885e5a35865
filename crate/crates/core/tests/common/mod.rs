//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uuv_core::optimizer::{solve, GainObjective, GainQpProblem, PredictionTerm, SolveStatus};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn random_problem(rng: &mut ChaCha8Rng) -> GainQpProblem {
    let v3 =
        |rng: &mut ChaCha8Rng, lo: f64, hi: f64| Vector3::from_fn(|_, _| rng.gen_range(lo..hi));
    let diag = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| Matrix3::from_diagonal(&v3(rng, lo, hi));
    // Error components bounded away from zero so every gain interval is finite.
    let e0 = Vector3::from_fn(|_, _| {
        let m = rng.gen_range(0.1..5.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let rho_lo = v3(rng, -2.0, -0.5);
    let rho_hi = v3(rng, 0.5, 2.0);
    let n_nb = rng.gen_range(0..3);
    GainQpProblem {
        e0,
        eta0: v3(rng, -10.0, 10.0),
        ref_pos: v3(rng, -10.0, 10.0),
        ref_vel: v3(rng, -0.4, 0.4),
        rho_prev: v3(rng, -1.0, 1.0),
        k_prev: v3(rng, 0.05, 2.0),
        q: diag(rng, 0.0, 20.0),
        r1: diag(rng, 0.0, 5.0),
        r2: diag(rng, 0.0, 5.0),
        p: v3(rng, 0.0, 1.0),
        dt_sample: 0.1,
        rho_lo,
        rho_hi,
        k_min: 1e-3,
        neighbors: (0..n_nb)
            .map(|_| PredictionTerm {
                weight: rng.gen_range(0.1..1.5),
                eta1: v3(rng, -10.0, 10.0),
                delta: v3(rng, -10.0, 10.0),
            })
            .collect(),
        pinning: if rng.gen_bool(0.7) {
            rng.gen_range(0.1..1.5)
        } else {
            0.0
        },
        objective: if rng.gen_bool(0.5) {
            GainObjective::Tracking
        } else {
            GainObjective::Literal
        },
    }
}

/// Axis-`j` contribution to the objective, written out from the problem
/// definition without going through the solver's helpers.
pub fn axis_cost(p: &GainQpProblem, j: usize, k: f64) -> f64 {
    let rho = p.ref_vel[j] - k * p.e0[j];
    let eta1 = p.eta0[j] + rho * p.dt_sample;
    let tracking = p.objective == GainObjective::Tracking;
    let drift = if tracking {
        p.ref_vel[j] * p.dt_sample
    } else {
        0.0
    };
    let mut e1 = p.pinning * (eta1 - p.ref_pos[j] - drift);
    for n in &p.neighbors {
        e1 += n.weight * (eta1 - n.eta1[j] - drift - n.delta[j]);
    }
    let f = if tracking { rho - p.ref_vel[j] } else { rho };
    let dr = rho - p.rho_prev[j];
    let dk = k - p.k_prev[j];
    p.q[(j, j)] * e1 * e1 + p.r1[(j, j)] * f * f + p.r2[(j, j)] * dr * dr + p.p[j] * dk * dk
}

pub fn interval(p: &GainQpProblem, j: usize) -> (f64, f64) {
    let (e, v) = (p.e0[j], p.ref_vel[j]);
    let (a, b) = ((v - p.rho_hi[j]) / e, (v - p.rho_lo[j]) / e);
    (a.min(b).max(p.k_min), a.max(b))
}

/// Dense grid, then a ternary search on the bracket around the best node.
pub fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const N: usize = 20_000;
    let h = (hi - lo) / N as f64;
    let best = (0..=N)
        .min_by(|&a, &b| f(lo + a as f64 * h).total_cmp(&f(lo + b as f64 * h)))
        .unwrap();
    let (mut a, mut b) = (
        (lo + (best as f64 - 1.0) * h).max(lo),
        (lo + (best as f64 + 1.0) * h).min(hi),
    );
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let k = 0.5 * (a + b);
    (k, f(k))
}

/// Solve `cases` random gain problems and check each against a scalar grid
/// search. Returns how many exercised the no-worse-than-holding check.
pub fn qp_oracle_check(seed: u64, cases: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feasible_prev = 0;
    for case in 0..cases {
        let mut p = random_problem(&mut rng);
        if case % 2 == 0 {
            for j in 0..3 {
                let (lo, hi) = interval(&p, j);
                p.k_prev[j] = rng.gen_range(lo..=hi);
            }
        }
        let sol = solve(&p).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            sol.status != SolveStatus::InfeasibleRepaired,
            "case {case}: repaired"
        );

        let mut oracle = 0.0;
        let mut at_prev = 0.0;
        let mut prev_ok = true;
        for j in 0..3 {
            let (lo, hi) = interval(&p, j);
            ensure!(lo <= hi, "case {case}: empty interval on axis {j}");
            oracle += grid_min(|k| axis_cost(&p, j, k), lo, hi).1;
            at_prev += axis_cost(&p, j, p.k_prev[j]);
            prev_ok &= (lo..=hi).contains(&p.k_prev[j]);
        }
        let solver: f64 = (0..3).map(|j| axis_cost(&p, j, sol.k_star[j])).sum();
        ensure!(
            (solver - sol.objective).abs() <= 1e-9 * solver.max(1.0),
            "case {case}: reported objective"
        );
        ensure!(
            (solver - oracle).abs() <= 1e-6 * oracle.max(1.0),
            "case {case}: solver {solver} vs oracle {oracle}"
        );

        for j in 0..3 {
            ensure!(sol.k_star[j] >= p.k_min, "case {case}");
            ensure!(
                sol.rho_star[j] >= p.rho_lo[j] && sol.rho_star[j] <= p.rho_hi[j],
                "case {case}"
            );
            ensure!(
                (sol.rho_star[j] - (p.ref_vel[j] - sol.k_star[j] * p.e0[j])).abs() < 1e-9,
                "case {case}"
            );
        }
        if prev_ok {
            feasible_prev += 1;
            ensure!(
                solver <= at_prev + 1e-12 * at_prev.max(1.0),
                "case {case}: worse than holding the gains"
            );
        }
    }
    Ok(feasible_prev)
}
