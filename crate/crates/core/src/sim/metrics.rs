//! Summary metrics extracted from a simulation log.

use crate::controller::ControllerVariant;
use crate::{Error, Result};

use super::log::SimLog;

/// Absolute floor on the settling threshold, for runs that start in formation.
pub const SETTLING_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleMetrics {
    pub initial_error: f64,
    pub final_error: f64,
    /// First record time after which `||e||` stays below the threshold.
    pub settling_time: Option<f64>,
    pub steady_mean_error: f64,
    pub steady_max_error: f64,
    pub steady_mean_z: f64,
    pub steady_max_z: f64,
    /// Sup of `||e||` over the second half of the horizon.
    pub late_max_error: f64,
    pub peak_tau: [f64; 3],
    /// Peak `|tau|` within the start-up window.
    pub startup_peak_tau: [f64; 3],
    /// Integration steps whose virtual velocity left the configured box.
    pub box_violations: usize,
    /// `(t, k)` at every record.
    pub gains: Vec<(f64, [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: ControllerVariant,
    pub vehicles: Vec<VehicleMetrics>,
}

impl MetricsReport {
    pub fn total_violations(&self) -> usize {
        self.vehicles.iter().map(|v| v.box_violations).sum()
    }

    pub fn mean_steady_z(&self) -> f64 {
        self.vehicles.iter().map(|v| v.steady_mean_z).sum::<f64>() / self.vehicles.len() as f64
    }

    /// Worst settling time over the fleet; `None` if any vehicle never settles.
    pub fn worst_settling(&self) -> Option<f64> {
        self.vehicles
            .iter()
            .map(|v| v.settling_time)
            .try_fold(0.0f64, |acc, s| s.map(|s| acc.max(s)))
    }

    pub fn summary(&self) -> String {
        let mut out = format!("controller {}\n", self.variant);
        out.push_str("vehicle  e0        e_final    settle[s]  ss_mean_e  ss_mean_z  peak|tau1|  startup|tau1|  box_viol\n");
        for (i, v) in self.vehicles.iter().enumerate() {
            let settle = v
                .settling_time
                .map_or("never".to_string(), |t| format!("{t:.1}"));
            out.push_str(&format!(
                "{:<8} {:<9.4} {:<10.3e} {:<10} {:<10.3e} {:<10.3e} {:<11.3} {:<14.3} {}\n",
                i + 1,
                v.initial_error,
                v.final_error,
                settle,
                v.steady_mean_error,
                v.steady_mean_z,
                v.peak_tau[0],
                v.startup_peak_tau[0],
                v.box_violations
            ));
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn max(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

pub fn metrics(log: &SimLog) -> Result<MetricsReport> {
    let first = log.records.first().ok_or(Error::EmptyLog)?;
    let last = log.records.last().ok_or(Error::EmptyLog)?;
    let t_end = last.t;
    let steady_from = 0.75 * t_end;
    let late_from = 0.5 * t_end;

    let vehicles = (0..log.n_vehicles)
        .map(|i| {
            let series =
                |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..log.records.len()).map(f).collect() };
            let v = |k: usize| &log.records[k].vehicles[i];
            let e = series(&|k| v(k).e_norm);
            let initial_error = first.vehicles[i].e_norm;
            let threshold = (log.settling_fraction * initial_error).max(SETTLING_FLOOR);
            let settling_time = match e.iter().rposition(|x| *x >= threshold) {
                None => Some(first.t),
                Some(k) if k + 1 < e.len() => Some(log.records[k + 1].t),
                Some(_) => None,
            };
            let window = |from: f64| -> Vec<usize> {
                (0..log.records.len())
                    .filter(|&k| log.records[k].t >= from)
                    .collect()
            };
            let steady = window(steady_from);
            let steady_e: Vec<f64> = steady.iter().map(|&k| e[k]).collect();
            let steady_z: Vec<f64> = steady.iter().map(|&k| v(k).z).collect();
            let peak = |pred: &dyn Fn(f64) -> bool| -> [f64; 3] {
                std::array::from_fn(|c| {
                    max(log
                        .records
                        .iter()
                        .filter(|r| pred(r.t))
                        .map(|r| r.vehicles[i].tau_peak[c]))
                })
            };
            VehicleMetrics {
                initial_error,
                final_error: last.vehicles[i].e_norm,
                settling_time,
                steady_mean_error: mean(&steady_e),
                steady_max_error: max(steady_e.iter().copied()),
                steady_mean_z: mean(&steady_z),
                steady_max_z: max(steady_z.iter().copied()),
                late_max_error: max(window(late_from).iter().map(|&k| e[k])),
                peak_tau: peak(&|_| true),
                startup_peak_tau: peak(&|t| t <= log.startup_window),
                box_violations: log
                    .records
                    .iter()
                    .map(|r| r.vehicles[i].box_violations)
                    .sum(),
                gains: log
                    .records
                    .iter()
                    .map(|r| (r.t, r.vehicles[i].k.into()))
                    .collect(),
            }
        })
        .collect();
    Ok(MetricsReport {
        variant: log.variant,
        vehicles,
    })
}
