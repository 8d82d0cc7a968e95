use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PlanError, PlannerConfig};
use crate::world::{normalize_angle, Cell, OccupancyGrid, Pose};

/// Cell-center waypoints from the robot's cell to the goal cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    pub waypoints: Vec<(f64, f64)>,
    /// Obstacle-aware distance-to-goal field the path was extracted from.
    #[serde(skip)]
    pub nav: Option<Arc<NavField>>,
}

/// Shortest-path distance (meters) from every passable cell to the goal.
#[derive(Debug, Clone, PartialEq)]
pub struct NavField {
    width: usize,
    height: usize,
    resolution: f64,
    dist: Vec<f64>,
}

impl NavField {
    pub fn at_cell(&self, c: Cell) -> f64 {
        self.dist[c.y * self.width + c.x]
    }

    /// Distance to goal from a world point: the best of `field + offset`
    /// over the passable cell centers in the 3x3 block around the point.
    /// Infinite when none of them is passable.
    pub fn distance_from(&self, x: f64, y: f64) -> f64 {
        let cx = (x / self.resolution).floor() as i64;
        let cy = (y / self.resolution).floor() as i64;
        let mut best = f64::INFINITY;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (cx + dx, cy + dy);
                if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                    continue;
                }
                let d = self.dist[ny as usize * self.width + nx as usize];
                if !d.is_finite() {
                    continue;
                }
                let px = (nx as f64 + 0.5) * self.resolution;
                let py = (ny as f64 + 0.5) * self.resolution;
                best = best.min(d + ((x - px).powi(2) + (y - py).powi(2)).sqrt());
            }
        }
        best
    }
}

impl GlobalPath {
    /// Path without a navigation field (DWA then falls back to straight-line
    /// goal distance).
    pub fn from_waypoints(waypoints: Vec<(f64, f64)>) -> Self {
        Self { waypoints, nav: None }
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| seg_len(w[0], w[1]))
            .sum()
    }
}

fn seg_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (cost, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over 8-connected cells whose clearance exceeds the footprint
/// radius, rooted at the goal. Diagonal moves may not cut blocked corners.
/// Among equal-cost successors the smaller cell index wins. The full
/// distance field is kept on the path for the local planner.
pub fn plan_global(grid: &OccupancyGrid, from: &Pose, goal: Cell, cfg: &PlannerConfig) -> Result<GlobalPath, PlanError> {
    let start = grid.cell_of(from.x, from.y).ok_or(PlanError::NoPath)?;
    if !grid.in_bounds(goal) || grid.occupied(goal) || grid.occupied(start) {
        return Err(PlanError::NoPath);
    }
    let df = grid.distance_field();
    let (start_i, goal_i) = (grid.index(start), grid.index(goal));
    let passable = |i: usize| i == start_i || i == goal_i || df.as_slice()[i] > cfg.footprint_radius;

    let n = grid.cells().len();
    let res = grid.resolution();
    let mut dist = vec![f64::INFINITY; n];
    // next hop towards the goal
    let mut next = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[goal_i] = 0.0;
    heap.push(Entry { cost: 0.0, index: goal_i });
    let (w, h) = (grid.width() as i64, grid.height() as i64);

    while let Some(Entry { cost, index }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        let (x, y) = ((index % grid.width()) as i64, (index / grid.width()) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if done[j] || !passable(j) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !(passable((y * w + nx) as usize) && passable((ny * w + x) as usize)) {
                    continue;
                }
                let step = if diagonal { std::f64::consts::SQRT_2 * res } else { res };
                let nd = cost + step;
                if nd < dist[j] || (nd == dist[j] && index < next[j]) {
                    dist[j] = nd;
                    next[j] = index;
                    heap.push(Entry { cost: nd, index: j });
                }
            }
        }
    }
    if !dist[start_i].is_finite() {
        return Err(PlanError::NoPath);
    }
    let mut cells = vec![start_i];
    let mut cur = start_i;
    while cur != goal_i {
        cur = next[cur];
        cells.push(cur);
    }
    Ok(GlobalPath {
        waypoints: cells
            .into_iter()
            .map(|i| grid.cell_center(grid.cell_at_index(i)))
            .collect(),
        nav: Some(Arc::new(NavField {
            width: grid.width(),
            height: grid.height(),
            resolution: res,
            dist,
        })),
    })
}

/// Plans against obstacles grown by `margin` on top of the footprint, falling
/// back to the bare footprint when the grown map has no path.
pub fn plan_with_margin(
    grid: &OccupancyGrid,
    from: &Pose,
    goal: Cell,
    cfg: &PlannerConfig,
    margin: f64,
) -> Result<GlobalPath, PlanError> {
    if margin > 0.0 {
        let grown = PlannerConfig {
            footprint_radius: cfg.footprint_radius + margin,
            ..cfg.clone()
        };
        if let Ok(p) = plan_global(grid, from, goal, &grown) {
            return Ok(p);
        }
    }
    plan_global(grid, from, goal, cfg)
}

/// Index of the waypoint closest to the pose (first one on ties).
pub fn nearest_waypoint(path: &GlobalPath, pose: &Pose) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, &(x, y)) in path.waypoints.iter().enumerate() {
        let d = (x - pose.x).powi(2) + (y - pose.y).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Point reached after walking `distance` meters along the path from the
/// waypoint nearest the pose (the last waypoint if the path runs out).
pub fn lookahead_point(path: &GlobalPath, pose: &Pose, distance: f64) -> (f64, f64) {
    let start = nearest_waypoint(path, pose);
    let mut remaining = distance;
    for w in path.waypoints[start..].windows(2) {
        let len = seg_len(w[0], w[1]);
        if len >= remaining {
            let f = if len > 0.0 { remaining / len } else { 0.0 };
            return (w[0].0 + f * (w[1].0 - w[0].0), w[0].1 + f * (w[1].1 - w[0].1));
        }
        remaining -= len;
    }
    *path.waypoints.last().expect("non-empty path")
}

/// Length-weighted circular mean of the path tangent over the first
/// `lookahead` meters past the nearest waypoint, in the robot frame.
pub fn local_goal(path: &GlobalPath, pose: &Pose, lookahead: f64) -> f64 {
    let start = nearest_waypoint(path, pose);
    let rest = &path.waypoints[start..];
    if rest.len() < 2 {
        let (x, y) = rest[0];
        if (x - pose.x).abs() < 1e-12 && (y - pose.y).abs() < 1e-12 {
            return 0.0;
        }
        return normalize_angle((y - pose.y).atan2(x - pose.x) - pose.heading);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut remaining = lookahead;
    for w in rest.windows(2) {
        if remaining <= 0.0 {
            break;
        }
        let len = seg_len(w[0], w[1]);
        if len == 0.0 {
            continue;
        }
        let used = len.min(remaining);
        sx += used * (w[1].0 - w[0].0) / len;
        sy += used * (w[1].1 - w[0].1) / len;
        remaining -= used;
    }
    if sx == 0.0 && sy == 0.0 {
        return 0.0;
    }
    normalize_angle(sy.atan2(sx) - pose.heading)
}
