//! Per-sample simulation records and their CSV form.

use std::io::{self, Write};

use nalgebra::{Vector2, Vector3};

use crate::controller::ControllerVariant;
use crate::optimizer::SolveStatus;

/// Snapshot of one vehicle at a record instant.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub eta1: Vector3<f64>,
    pub eta2: Vector2<f64>,
    pub nu1: Vector3<f64>,
    pub nu2: Vector2<f64>,
    pub e: Vector3<f64>,
    pub e_norm: f64,
    pub u_cmd: f64,
    pub theta_cmd: f64,
    pub psi_cmd: f64,
    pub rho: Vector3<f64>,
    pub k: Vector3<f64>,
    pub tau: [f64; 3],
    /// Largest `|tau|` per channel since the previous record.
    pub tau_peak: [f64; 3],
    pub shunting: [f64; 3],
    pub z: f64,
    /// Steps since the previous record whose `rho` left the velocity box.
    pub box_violations: usize,
    /// Last optimiser outcome, `None` for fixed-gain variants.
    pub status: Option<SolveStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLogRecord {
    pub t: f64,
    pub vehicles: Vec<VehicleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub variant: ControllerVariant,
    pub n_vehicles: usize,
    pub dt: f64,
    pub dt_sample: f64,
    pub t_final: f64,
    pub startup_window: f64,
    pub settling_fraction: f64,
    pub rho_lo: Vector3<f64>,
    pub rho_hi: Vector3<f64>,
    pub records: Vec<SimLogRecord>,
}

/// Column names of one vehicle block, in order.
#[rustfmt::skip]
pub const VEHICLE_COLUMNS: [&str; 35] = [
    "eta_x", "eta_y", "eta_z", "theta", "psi", "u", "v", "w", "q", "r",
    "e_x", "e_y", "e_z", "e_norm",
    "u_cmd", "theta_cmd", "psi_cmd",
    "rho_x", "rho_y", "rho_z",
    "k_x", "k_y", "k_z",
    "tau1", "tau2", "tau3",
    "tau1_peak", "tau2_peak", "tau3_peak",
    "x1", "x2", "x3",
    "z", "rho_viol", "status",
];

fn fmt_f(x: f64) -> String {
    format!("{x:.8e}")
}

impl SimLog {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for i in 1..=self.n_vehicles {
            h.extend(VEHICLE_COLUMNS.iter().map(|c| format!("{c}_{i}")));
        }
        h
    }

    pub fn row(&self, rec: &SimLogRecord) -> Vec<String> {
        let mut row = vec![fmt_f(rec.t)];
        for v in &rec.vehicles {
            let floats = v
                .eta1
                .iter()
                .chain(v.eta2.iter())
                .chain(v.nu1.iter())
                .chain(v.nu2.iter())
                .chain(v.e.iter())
                .copied()
                .chain([v.e_norm, v.u_cmd, v.theta_cmd, v.psi_cmd])
                .chain(v.rho.iter().copied())
                .chain(v.k.iter().copied())
                .chain(v.tau)
                .chain(v.tau_peak)
                .chain(v.shunting)
                .chain([v.z]);
            row.extend(floats.map(fmt_f));
            row.push(v.box_violations.to_string());
            row.push(v.status.map_or("fixed", |s| s.label()).to_string());
        }
        row
    }

    /// Write the log as CSV. With `controller` set, a leading column
    /// carrying that label is added (used for combined comparison files).
    pub fn write_csv(
        &self,
        mut w: impl Write,
        controller: Option<&str>,
        header: bool,
    ) -> io::Result<()> {
        if header {
            let mut h = self.header();
            if controller.is_some() {
                h.insert(0, "controller".into());
            }
            writeln!(w, "{}", h.join(","))?;
        }
        for rec in &self.records {
            let mut r = self.row(rec);
            if let Some(c) = controller {
                r.insert(0, c.to_string());
            }
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, None, true)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}
