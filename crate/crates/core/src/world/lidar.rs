use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::grid::{Cell, OccupancyGrid};
use super::kinematics::Pose;
use super::WorldError;

pub const SCAN_BEAMS: usize = 720;
/// 270 degrees.
pub const SCAN_FOV: f64 = 1.5 * PI;

/// Planar range scan. Beam `i` points at `heading - fov/2 + i*fov/719`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub ranges: Vec<f64>,
    pub fov: f64,
    pub max_range: f64,
}

impl Scan {
    pub fn beam_angle(heading: f64, i: usize) -> f64 {
        heading - SCAN_FOV / 2.0 + i as f64 * SCAN_FOV / (SCAN_BEAMS - 1) as f64
    }

    /// Every `SCAN_BEAMS / n`-th range, for lightweight telemetry.
    pub fn decimate(&self, n: usize) -> Vec<f64> {
        let n = n.clamp(1, self.ranges.len());
        let stride = self.ranges.len() as f64 / n as f64;
        (0..n).map(|k| self.ranges[(k as f64 * stride) as usize]).collect()
    }
}

/// Noiseless scan by grid traversal from the pose.
pub fn raycast(grid: &OccupancyGrid, pose: &Pose, max_range: f64) -> Result<Scan, WorldError> {
    let inside = grid
        .cell_of(pose.x, pose.y)
        .ok_or(WorldError::PoseInsideObstacle { x: pose.x, y: pose.y })?;
    if grid.occupied(inside) {
        return Err(WorldError::PoseInsideObstacle { x: pose.x, y: pose.y });
    }
    let ranges = (0..SCAN_BEAMS)
        .map(|i| cast_beam(grid, pose.x, pose.y, Scan::beam_angle(pose.heading, i), max_range))
        .collect();
    Ok(Scan {
        ranges,
        fov: SCAN_FOV,
        max_range,
    })
}

/// `raycast` plus zero-mean Gaussian range noise, re-clipped to (0, max].
pub fn raycast_noisy<R: Rng>(
    grid: &OccupancyGrid,
    pose: &Pose,
    max_range: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<Scan, WorldError> {
    let mut scan = raycast(grid, pose, max_range)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        for r in &mut scan.ranges {
            *r = (*r + normal.sample(rng)).clamp(MIN_RANGE, max_range);
        }
    }
    Ok(scan)
}

const MIN_RANGE: f64 = 1e-9;

/// Amanatides-Woo traversal. Returns the distance at which the beam enters
/// the first occupied cell, clipped to `max_range`.
fn cast_beam(grid: &OccupancyGrid, x: f64, y: f64, angle: f64, max_range: f64) -> f64 {
    let res = grid.resolution();
    let (dx, dy) = (angle.cos(), angle.sin());
    let gx = x / res;
    let gy = y / res;
    let mut cx = gx.floor() as i64;
    let mut cy = gy.floor() as i64;
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    // distance along the beam (cell units) to the next vertical / horizontal line
    let mut t_max_x = if dx.abs() < 1e-15 {
        f64::INFINITY
    } else if dx > 0.0 {
        ((cx + 1) as f64 - gx) / dx
    } else {
        (gx - cx as f64) / -dx
    };
    let mut t_max_y = if dy.abs() < 1e-15 {
        f64::INFINITY
    } else if dy > 0.0 {
        ((cy + 1) as f64 - gy) / dy
    } else {
        (gy - cy as f64) / -dy
    };
    let t_delta_x = if dx.abs() < 1e-15 { f64::INFINITY } else { 1.0 / dx.abs() };
    let t_delta_y = if dy.abs() < 1e-15 { f64::INFINITY } else { 1.0 / dy.abs() };
    let limit = max_range / res;
    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= limit {
            return max_range;
        }
        let blocked = cx < 0
            || cy < 0
            || cx >= grid.width() as i64
            || cy >= grid.height() as i64
            || grid.occupied(Cell::new(cx as usize, cy as usize));
        if blocked {
            return (t * res).clamp(MIN_RANGE, max_range);
        }
    }
}
