//! Adaptive planner parameter learning from evaluative feedback.
//!
//! A 2D navigation stack (cave environments, unicycle robot, 270° lidar,
//! Dijkstra global planner, DWA local planner with eight tunable
//! parameters) plus learners that pick planner parameters from scalar
//! feedback on how well the robot is doing.

// Validation uses `!(x > 0.0)` style checks so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apple;
pub mod evalx;
pub mod gateway;
pub mod nn;
pub mod oracle;
pub mod planner;
pub mod rng;
pub mod world;
