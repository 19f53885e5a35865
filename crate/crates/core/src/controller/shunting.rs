//! Bounded shunting neurodynamics used as error compensators.

use serde::{Deserialize, Serialize};

use crate::ode::rk4_step;
use nalgebra::Vector1;

/// Decay `a`, upper bound `b` and lower bound `b'` for each of the surge,
/// pitch-rate and yaw-rate channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntingParams {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub b_prime: [f64; 3],
}

/// Neuron activities for the `u`, `q`, `r` channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShuntingState {
    pub x: [f64; 3],
}

fn excitation(y: f64, b: f64, b_prime: f64) -> f64 {
    if y >= 0.0 {
        b * y
    } else {
        b_prime * y
    }
}

/// Right-hand side `-(a + |s|) x + g(s)` of one channel.
pub fn shunting_rate(x: f64, s: f64, a: f64, b: f64, b_prime: f64) -> f64 {
    -(a + s.abs()) * x + excitation(s, b, b_prime)
}

/// Steady state for a constant input.
pub fn shunting_equilibrium(s: f64, a: f64, b: f64, b_prime: f64) -> f64 {
    excitation(s, b, b_prime) / (a + s.abs())
}

// RK4 keeps the update a convex combination of the old state and the
// equilibrium while the decay rate times the step stays below this.
const RK4_CONTRACTIVE: f64 = 2.0;

fn channel_step(x: f64, s: f64, a: f64, b: f64, b_prime: f64, dt: f64) -> f64 {
    let rate = a + s.abs();
    let substeps = ((rate * dt / RK4_CONTRACTIVE).ceil() as usize).max(1);
    let h = dt / substeps as f64;
    let mut y = Vector1::new(x);
    for k in 0..substeps {
        y = rk4_step::<1, std::convert::Infallible>(k as f64 * h, &y, h, |_, v| {
            Ok(Vector1::new(shunting_rate(v[0], s, a, b, b_prime)))
        })
        .unwrap_or_else(|e| match e {});
    }
    // Rounding can leave the iterate an ulp outside the invariant interval.
    y[0].clamp(-b_prime, b)
}

/// Advance the three channels by `dt` with inputs `s = (u~, q~, r~)` held.
pub fn shunting_step(
    state: &ShuntingState,
    s: [f64; 3],
    params: &ShuntingParams,
    dt: f64,
) -> ShuntingState {
    let x = std::array::from_fn(|j| {
        channel_step(
            state.x[j],
            s[j],
            params.a[j],
            params.b[j],
            params.b_prime[j],
            dt,
        )
    });
    ShuntingState { x }
}
