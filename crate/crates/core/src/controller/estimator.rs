//! Causal derivative estimation for command and flow-angle signals.

use crate::{Error, Result};

/// First-order washout differentiator, `s / (tau_f s + 1)` discretised with
/// an exact exponential low-pass. Steady-state response to a ramp is its
/// slope exactly; the gain never exceeds `1 / tau_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct WashoutDifferentiator {
    alpha: f64,
    dt: f64,
    lowpass: Option<f64>,
}

impl WashoutDifferentiator {
    pub fn new(tau_f: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep(dt));
        }
        if !(tau_f >= 2.0 * dt) || !tau_f.is_finite() {
            return Err(Error::InvalidGains(format!(
                "filter time constant {tau_f} must be at least twice the step {dt}"
            )));
        }
        Ok(Self {
            alpha: 1.0 - (-dt / tau_f).exp(),
            dt,
            lowpass: None,
        })
    }

    /// Feed the next sample and return the rate estimate. The first sample
    /// initialises the filter and yields zero.
    pub fn update(&mut self, u: f64) -> f64 {
        let xf = *self.lowpass.get_or_insert(u);
        let innovation = self.alpha * (u - xf);
        self.lowpass = Some(xf + innovation);
        innovation / self.dt
    }

    pub fn reset(&mut self) {
        self.lowpass = None;
    }
}
