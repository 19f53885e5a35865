//! Scenario loading, closed-loop simulation, logging and metrics.

pub mod disturbance;
pub mod engine;
pub mod log;
pub mod metrics;
pub mod scenario;

pub use disturbance::{disturbance_at, DisturbanceProfile};
pub use engine::{run, RunError};
pub use log::{SimLog, SimLogRecord};
pub use metrics::{metrics, MetricsReport};
pub use scenario::{Scenario, ScenarioFile};
