use super::global::{lookahead_point, nearest_waypoint, GlobalPath};
use super::{local_goal, PlanError, PlannerConfig, PlannerParams};
use crate::world::{step_dynamics, OccupancyGrid, Pose, Twist};

/// Winning candidate of a DWA search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwaChoice {
    pub twist: Twist,
    pub cost: f64,
}

/// Velocity command chosen by the dynamic window search.
pub fn dwa_plan(
    grid: &OccupancyGrid,
    pose: &Pose,
    path: &GlobalPath,
    params: &PlannerParams,
    cfg: &PlannerConfig,
) -> Result<Twist, PlanError> {
    dwa_search(grid, pose, path, params, cfg).map(|c| c.twist)
}

/// Samples `vx_samples` linear velocities in `[0, max_vel_x]` and
/// `vtheta_samples` angular velocities in `[-max_vel_theta, max_vel_theta]`
/// (endpoints included), rolls each out over the horizon, drops rollouts
/// that come within `footprint + inflation_radius` of an obstacle and
/// returns the cheapest survivor. Cost ties go to higher `v`, then smaller
/// `|w|`, then the left turn.
pub fn dwa_search(
    grid: &OccupancyGrid,
    pose: &Pose,
    path: &GlobalPath,
    params: &PlannerParams,
    cfg: &PlannerConfig,
) -> Result<DwaChoice, PlanError> {
    params.validate()?;
    if path.waypoints.is_empty() {
        return Err(PlanError::NoPath);
    }
    let df = grid.distance_field();
    let required = cfg.footprint_radius + params.inflation_radius;
    let steps = ((cfg.horizon / cfg.rollout_dt).round() as usize).max(1);
    let goal_point = lookahead_point(path, pose, cfg.dwa_goal_lookahead);
    // The waypoint nearest any rollout endpoint lies within d0 + 2*v*T of the
    // pose (d0 = distance to the nearest waypoint), so the rest can be skipped.
    let nearest = path.waypoints[nearest_waypoint(path, pose)];
    let d0 = ((nearest.0 - pose.x).powi(2) + (nearest.1 - pose.y).powi(2)).sqrt();
    let reach = d0 + 2.0 * params.max_vel_x * cfg.horizon + 1e-9;
    let near: Vec<(f64, f64)> = path
        .waypoints
        .iter()
        .copied()
        .filter(|&(x, y)| ((x - pose.x).powi(2) + (y - pose.y).powi(2)).sqrt() <= reach)
        .collect();

    // Close to the goal a forward point would overshoot it.
    let near_goal = path
        .nav
        .as_ref()
        .is_some_and(|n| n.distance_from(pose.x, pose.y) < 2.0 * cfg.forward_point_distance);
    let forward = if near_goal { 0.0 } else { cfg.forward_point_distance };

    let ns = params.vx_samples as usize;
    let nt = params.vtheta_samples as usize;
    let mut best: Option<DwaChoice> = None;
    for i in 0..ns {
        let v = params.max_vel_x * i as f64 / (ns - 1) as f64;
        for j in 0..nt {
            let w = -params.max_vel_theta + 2.0 * params.max_vel_theta * j as f64 / (nt - 1) as f64;
            let twist = Twist::new(v, w);
            let mut p = *pose;
            let mut collided = false;
            for _ in 0..steps {
                p = step_dynamics(p, twist, cfg.rollout_dt);
                if df.clearance_lower_bound(p.x, p.y) < required {
                    collided = true;
                    break;
                }
            }
            if collided {
                continue;
            }
            let clearance = df.clearance_lower_bound(p.x, p.y).max(cfg.min_clearance);
            let occ = 1.0 / clearance;
            let path_dist = near
                .iter()
                .map(|&(x, y)| (x - p.x).powi(2) + (y - p.y).powi(2))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            let fx = p.x + forward * p.heading.cos();
            let fy = p.y + forward * p.heading.sin();
            let goal_dist = goal_distance(path, (fx, fy), (p.x, p.y), goal_point);
            // path and goal distances in map cells, as the weights expect
            let cost = params.occdist_scale * occ
                + (params.pdist_scale * path_dist + params.gdist_scale * goal_dist) / grid.resolution();
            let candidate = DwaChoice { twist, cost };
            if best.is_none_or(|b| better(&candidate, &b)) {
                best = Some(candidate);
            }
        }
    }
    best.ok_or(PlanError::NoFeasibleMotion)
}

/// Navigation-field distance to the goal from the forward point (falling
/// back to the rollout endpoint), else straight-line distance to the
/// lookahead point.
fn goal_distance(path: &GlobalPath, forward: (f64, f64), end: (f64, f64), lookahead: (f64, f64)) -> f64 {
    if let Some(nav) = &path.nav {
        let d = nav.distance_from(forward.0, forward.1);
        if d.is_finite() {
            return d;
        }
        let d = nav.distance_from(end.0, end.1);
        if d.is_finite() {
            return d;
        }
    }
    ((forward.0 - lookahead.0).powi(2) + (forward.1 - lookahead.1).powi(2)).sqrt()
}

fn better(a: &DwaChoice, b: &DwaChoice) -> bool {
    if a.cost != b.cost {
        return a.cost < b.cost;
    }
    if a.twist.v != b.twist.v {
        return a.twist.v > b.twist.v;
    }
    if a.twist.w.abs() != b.twist.w.abs() {
        return a.twist.w.abs() < b.twist.w.abs();
    }
    a.twist.w > b.twist.w
}

/// Rotate in place at half the angular limit, turning towards the local goal.
pub fn recovery_twist(path: &GlobalPath, pose: &Pose, params: &PlannerParams, cfg: &PlannerConfig) -> Twist {
    let g = if path.waypoints.is_empty() {
        0.0
    } else {
        local_goal(path, pose, cfg.local_goal_lookahead)
    };
    let dir = if g < 0.0 { -1.0 } else { 1.0 };
    Twist::new(0.0, dir * 0.5 * params.max_vel_theta)
}
