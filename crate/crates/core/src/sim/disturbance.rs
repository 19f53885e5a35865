//! Periodic exogenous disturbances.

use serde::{Deserialize, Serialize};

use crate::dynamics::DisturbanceVector;

/// Per-channel `amplitude * sin(frequency * t + phase)` for the five dynamic
/// equations (surge, sway, heave, pitch, yaw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSet {
    pub amplitude: [f64; 5],
    pub frequency: [f64; 5],
    pub phase: [f64; 5],
}

impl ChannelSet {
    pub fn at(&self, t: f64) -> DisturbanceVector {
        DisturbanceVector(std::array::from_fn(|j| {
            self.amplitude[j] * (self.frequency[j] * t + self.phase[j]).sin()
        }))
    }

    /// Upper bound on `||d(t)||` over all `t`.
    pub fn norm_bound(&self) -> f64 {
        self.amplitude.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.amplitude
            .iter()
            .chain(&self.frequency)
            .chain(&self.phase)
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceProfile {
    pub enabled: bool,
    /// Configured bound on the disturbance norm.
    pub cap: f64,
    /// One channel set per vehicle.
    pub vehicles: Vec<ChannelSet>,
}

impl DisturbanceProfile {
    pub fn off(n: usize) -> Self {
        let zero = ChannelSet {
            amplitude: [0.0; 5],
            frequency: [0.0; 5],
            phase: [0.0; 5],
        };
        Self {
            enabled: false,
            cap: 0.0,
            vehicles: vec![zero; n],
        }
    }
}

/// Disturbance acting on vehicle `i` at time `t`.
pub fn disturbance_at(profile: &DisturbanceProfile, i: usize, t: f64) -> DisturbanceVector {
    match profile.vehicles.get(i) {
        Some(c) if profile.enabled => c.at(t),
        _ => DisturbanceVector::zero(),
    }
}
