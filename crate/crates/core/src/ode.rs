//! Classic four-stage Runge-Kutta on fixed-size state vectors.

use nalgebra::SVector;

/// One RK4 step of `dy/dt = f(t, y)` from `t` to `t + dt`.
///
/// `f` is evaluated at `t`, `t + dt/2` (twice) and `t + dt`, so time-varying
/// inputs are sampled at the stage times. Errors from `f` abort the step.
pub fn rk4_step<const N: usize, E>(
    t: f64,
    y: &SVector<f64, N>,
    dt: f64,
    mut f: impl FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>, E>,
) -> Result<SVector<f64, N>, E> {
    let half = 0.5 * dt;
    let k1 = f(t, y)?;
    let k2 = f(t + half, &(y + k1 * half))?;
    let k3 = f(t + half, &(y + k2 * half))?;
    let k4 = f(t + dt, &(y + k3 * dt))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}
