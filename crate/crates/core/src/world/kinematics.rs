use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::grid::{Cell, OccupancyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    /// Linear velocity, m/s.
    pub v: f64,
    /// Angular velocity, rad/s.
    pub w: f64,
}

impl Twist {
    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    if r > PI {
        r = PI;
    }
    r
}

/// Exact unicycle integration over `dt` seconds.
pub fn step_dynamics(pose: Pose, cmd: Twist, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    let h = pose.heading;
    if cmd.w.abs() < 1e-9 {
        Pose {
            x: pose.x + cmd.v * dt * h.cos(),
            y: pose.y + cmd.v * dt * h.sin(),
            heading: normalize_angle(h),
        }
    } else {
        let r = cmd.v / cmd.w;
        let h2 = h + cmd.w * dt;
        Pose {
            x: pose.x + r * (h2.sin() - h.sin()),
            y: pose.y - r * (h2.cos() - h.cos()),
            heading: normalize_angle(h2),
        }
    }
}

/// True iff some occupied cell center lies strictly within `footprint_radius`
/// of the pose position.
pub fn check_collision(grid: &OccupancyGrid, pose: &Pose, footprint_radius: f64) -> bool {
    let res = grid.resolution();
    let r_cells = (footprint_radius / res).ceil() as i64 + 1;
    let cx = (pose.x / res).floor() as i64;
    let cy = (pose.y / res).floor() as i64;
    let r2 = footprint_radius * footprint_radius;
    for y in (cy - r_cells)..=(cy + r_cells) {
        for x in (cx - r_cells)..=(cx + r_cells) {
            if x < 0 || y < 0 || x >= grid.width() as i64 || y >= grid.height() as i64 {
                continue;
            }
            let c = Cell::new(x as usize, y as usize);
            if !grid.occupied(c) {
                continue;
            }
            let (ox, oy) = grid.cell_center(c);
            if (pose.x - ox).powi(2) + (pose.y - oy).powi(2) < r2 {
                return true;
            }
        }
    }
    false
}
