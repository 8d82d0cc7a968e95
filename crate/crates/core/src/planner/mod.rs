//! The parameterized navigation stack: Dijkstra global planner, local-goal
//! extraction and a DWA local planner driven by eight tunable parameters.

mod dwa;
mod global;
mod params;
mod state;

pub use dwa::{dwa_plan, dwa_search, recovery_twist, DwaChoice};
pub use global::{local_goal, lookahead_point, nearest_waypoint, plan_global, plan_with_margin, GlobalPath, NavField};
pub use params::{
    LibraryFile, ParamBounds, ParameterLibrary, PlannerParams, PARAM_DIM, PARAM_NAMES,
};
pub use state::{make_state, RobotState, STATE_DIM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::DEFAULT_FOOTPRINT_RADIUS;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no path to the goal")]
    NoPath,
    #[error("every sampled motion collides")]
    NoFeasibleMotion,
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
}

/// Fixed planner settings that are not part of the tunable parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub footprint_radius: f64,
    /// Rollout length, seconds.
    pub horizon: f64,
    /// Rollout integration step, seconds.
    pub rollout_dt: f64,
    /// Arc length of global path averaged into the local goal direction.
    pub local_goal_lookahead: f64,
    /// Arc length along the path of the point DWA steers towards.
    pub dwa_goal_lookahead: f64,
    /// Goal distance is measured from this far ahead of the rollout endpoint.
    pub forward_point_distance: f64,
    /// Floor on clearance in the obstacle cost.
    pub min_clearance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            footprint_radius: DEFAULT_FOOTPRINT_RADIUS,
            horizon: 1.0,
            rollout_dt: 0.1,
            local_goal_lookahead: 0.5,
            dwa_goal_lookahead: 2.5,
            forward_point_distance: 0.325,
            min_clearance: 0.01,
        }
    }
}
