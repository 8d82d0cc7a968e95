//! Benchmark environments, unicycle kinematics and planar lidar.

mod generate;
mod grid;
mod kinematics;
mod lidar;

pub use generate::{generate_environment, generate_with, CaConfig, Difficulty};
pub use grid::{Cell, DistanceField, OccupancyGrid};
pub use kinematics::{check_collision, normalize_angle, step_dynamics, Pose, Twist};
pub use lidar::{raycast, raycast_noisy, Scan, SCAN_BEAMS, SCAN_FOV};

use thiserror::Error;

/// Default cell size in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.15;
/// Default robot footprint radius in meters.
pub const DEFAULT_FOOTPRINT_RADIUS: f64 = 0.21;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("environment generation failed after {attempts} attempts (first seed {seed})")]
    GenerationFailed { seed: u64, attempts: u32 },
    #[error("pose ({x:.3}, {y:.3}) lies inside an obstacle")]
    PoseInsideObstacle { x: f64, y: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
}
