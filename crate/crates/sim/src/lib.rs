//! Ground-truth quadruped motion and sensor synthesis.
//!
//! Body trajectories are procedural (smooth attitude, speed and height
//! signals), feet follow swing splines between planned footholds on an
//! optional height field, and slips are scripted. Sensor streams are
//! derived from the truth with configurable noise, so every run is an exact
//! oracle for the estimator.

pub mod generate;
pub mod log;
pub mod scenario;

pub use generate::{generate, random_slips, Scenario, Terrain, TruthFrame, HIP_OFFSETS};
pub use log::{
    load_sensor_log, load_truth_log, read_sensor_log, read_truth_log, save_sensor_log, save_truth_log,
    write_sensor_log, write_truth_log, LogError, SensorLog, TruthLog,
};
pub use scenario::{ScenarioConfig, SensorNoise, SlipEvent};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
}
