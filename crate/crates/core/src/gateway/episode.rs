use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::apple::{ContinuousPolicy, DiscretePolicy, FeedbackRecord, FeedbackSource, LearnError, ParamChoice};
use crate::oracle::{discretize_saturating, oracle_feedback, OracleConfig};
use crate::planner::{
    dwa_plan, local_goal, make_state, plan_global, recovery_twist, plan_with_margin, GlobalPath, ParameterLibrary, PlanError, PlannerConfig,
    PlannerParams, RobotState,
};
use crate::rng::{rng_for, stream, SimRng};
use crate::world::{check_collision, raycast_noisy, step_dynamics, OccupancyGrid, Pose, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Parameter selection rate, Hz.
    pub control_hz: f64,
    /// Physics and local planner rate, Hz.
    pub sim_hz: f64,
    /// Seconds.
    pub timeout: f64,
    pub mode: FeedbackMode,
    pub explore: bool,
    /// Human mode: chance of a uniformly random library entry per control tick.
    pub random_explore_prob: f64,
    /// Meters.
    pub goal_tolerance: f64,
    /// Seconds between global replans.
    pub replan_period: f64,
    /// Seconds between a feedback and the control tick it labels.
    pub reaction_delay: f64,
    pub lidar_max_range: f64,
    pub lidar_noise_std: f64,
    /// Start heading is drawn uniformly within this many radians of +y.
    pub start_heading_jitter: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            control_hz: 1.0,
            sim_hz: 10.0,
            timeout: 100.0,
            mode: FeedbackMode::Oracle,
            explore: false,
            random_explore_prob: 0.3,
            goal_tolerance: 0.3,
            replan_period: 1.0,
            reaction_delay: 0.0,
            lidar_max_range: 10.0,
            lidar_noise_std: 0.0,
            start_heading_jitter: std::f64::consts::PI,
        }
    }
}

impl EpisodeConfig {
    /// Defaults for live human feedback.
    pub fn human() -> Self {
        Self {
            control_hz: 2.0,
            mode: FeedbackMode::Human,
            explore: true,
            reaction_delay: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(m));
        if !(self.sim_hz > 0.0 && self.sim_hz.is_finite()) {
            return bad(format!("sim_hz {}", self.sim_hz));
        }
        if !(self.control_hz > 0.0 && self.control_hz <= self.sim_hz) {
            return bad(format!("control_hz {} must be in (0, sim_hz]", self.control_hz));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return bad(format!("timeout {}", self.timeout));
        }
        if !(0.0..=1.0).contains(&self.random_explore_prob) {
            return bad(format!("random_explore_prob {}", self.random_explore_prob));
        }
        if !(self.goal_tolerance > 0.0) || !(self.replan_period > 0.0) || !(self.lidar_max_range > 0.0) {
            return bad("goal_tolerance, replan_period and lidar_max_range must be positive".into());
        }
        if !(self.reaction_delay >= 0.0) || !(self.lidar_noise_std >= 0.0) || !(self.start_heading_jitter >= 0.0) {
            return bad("reaction_delay, lidar_noise_std and start_heading_jitter must be non-negative".into());
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_hz
    }

    /// Sim ticks per period, at least one.
    pub fn ticks(&self, period: f64) -> u64 {
        ((period * self.sim_hz).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Seconds; the timeout for episodes that did not succeed.
    pub traversal_time: f64,
    pub outcome: Outcome,
    /// Pose at every sim tick, start included.
    pub trajectory: Vec<Pose>,
    /// Parameters chosen at each control tick, keyed by sim tick.
    pub params_trace: Vec<(u64, ParamChoice)>,
    pub feedback_count: u64,
    /// No global path existed from the start.
    pub no_path: bool,
    /// Sim ticks driven by the recovery rotation.
    pub recoveries: u64,
    /// Oracle values clamped into `[-e_max, e_max]`.
    pub clamped_feedback: u64,
}

/// What one sim tick produced.
#[derive(Debug, Default)]
pub struct TickReport {
    /// The state observed on a control tick.
    pub control: Option<RobotState>,
    pub feedback: Option<FeedbackRecord>,
}

/// Chooses planner parameters from a state.
pub trait ParamSelector {
    fn select(&mut self, state: &RobotState) -> Result<(ParamChoice, PlannerParams), LearnError>;
}

impl<F> ParamSelector for F
where
    F: FnMut(&RobotState) -> Result<(ParamChoice, PlannerParams), LearnError>,
{
    fn select(&mut self, state: &RobotState) -> Result<(ParamChoice, PlannerParams), LearnError> {
        self(state)
    }
}

/// Always the same parameters.
#[derive(Debug, Clone)]
pub struct FixedParams {
    pub choice: ParamChoice,
    pub params: PlannerParams,
}

impl FixedParams {
    /// The library default (entry 0).
    pub fn library_default(library: &ParameterLibrary) -> Self {
        Self {
            choice: ParamChoice::Index(0),
            params: *library.default_params(),
        }
    }
}

impl ParamSelector for FixedParams {
    fn select(&mut self, _: &RobotState) -> Result<(ParamChoice, PlannerParams), LearnError> {
        Ok((self.choice, self.params))
    }
}

/// How a discrete policy explores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    Greedy,
    /// The policy's own epsilon.
    Epsilon,
    /// Uniform random entry with this probability, greedy otherwise.
    Uniform(f64),
}

pub struct DiscreteSelector<'a> {
    pub policy: &'a DiscretePolicy,
    pub library: &'a ParameterLibrary,
    pub exploration: Exploration,
    pub rng: SimRng,
}

impl ParamSelector for DiscreteSelector<'_> {
    fn select(&mut self, state: &RobotState) -> Result<(ParamChoice, PlannerParams), LearnError> {
        let i = select_discrete(self.policy, self.library, state, self.exploration, &mut self.rng)?;
        Ok((ParamChoice::Index(i), self.library.entries()[i]))
    }
}

pub(crate) fn select_discrete<R: Rng + ?Sized>(
    policy: &DiscretePolicy,
    library: &ParameterLibrary,
    state: &RobotState,
    exploration: Exploration,
    rng: &mut R,
) -> Result<usize, LearnError> {
    if policy.library_size() != library.len() {
        return Err(LearnError::ModeMismatch(format!(
            "policy has {} heads, library {} entries",
            policy.library_size(),
            library.len()
        )));
    }
    match exploration {
        Exploration::Greedy => policy.select(state, false, rng),
        Exploration::Epsilon => policy.select(state, true, rng),
        Exploration::Uniform(p) => {
            if rng.gen::<f64>() < p {
                Ok(rng.gen_range(0..library.len()))
            } else {
                policy.select(state, false, rng)
            }
        }
    }
}

pub struct ContinuousSelector<'a> {
    pub policy: &'a ContinuousPolicy,
    /// Sample from the actor instead of taking its mean.
    pub stochastic: bool,
    pub rng: SimRng,
}

impl ParamSelector for ContinuousSelector<'_> {
    fn select(&mut self, state: &RobotState) -> Result<(ParamChoice, PlannerParams), LearnError> {
        let a = self.policy.sample(state, !self.stochastic, &mut self.rng)?;
        Ok((ParamChoice::Values(a.params), a.params))
    }
}

/// Seconds of recovery rotation at most.
const RECOVERY_TIME: f64 = 3.0;
/// Recovery ends once the local goal is within this many radians.
const RECOVERY_ALIGN: f64 = 0.15;
/// Moving less than `STALL_DISTANCE` meters in `STALL_WINDOW` seconds counts
/// as stuck.
const STALL_WINDOW: f64 = 5.0;
const STALL_DISTANCE: f64 = 0.1;

/// A navigation episode advanced one sim tick at a time.
///
/// The robot starts at the grid's start cell with a seeded random heading.
/// Every tick runs DWA with the active parameters (rotating in place when
/// no motion is feasible); control ticks observe the state and select new
/// parameters; in oracle mode feedback ticks score the commanded speed along
/// the local goal and label the control tick active `reaction_delay` earlier.
pub struct Episode<'g> {
    grid: &'g OccupancyGrid,
    cfg: EpisodeConfig,
    planner: PlannerConfig,
    oracle: OracleConfig,
    goal: (f64, f64),
    pose: Pose,
    path: Option<GlobalPath>,
    params: Option<(ParamChoice, PlannerParams)>,
    history: VecDeque<(u64, RobotState, ParamChoice)>,
    tick: u64,
    control_ticks: u64,
    feedback_ticks: u64,
    replan_ticks: u64,
    noise_rng: SimRng,
    /// Recovery ticks left.
    recovery_left: u64,
    /// Progress is measured from this tick on.
    stall_anchor: u64,
    result: EpisodeResult,
    done: bool,
}

impl<'g> Episode<'g> {
    pub fn new(
        grid: &'g OccupancyGrid,
        cfg: &EpisodeConfig,
        planner: &PlannerConfig,
        oracle: &OracleConfig,
        seed: u64,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        oracle.validate().map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        let mut rng = rng_for(seed, stream::EPISODE);
        let (sx, sy) = grid.cell_center(grid.start());
        let jitter = if cfg.start_heading_jitter > 0.0 {
            rng.gen_range(-cfg.start_heading_jitter..=cfg.start_heading_jitter)
        } else {
            0.0
        };
        let pose = Pose::new(sx, sy, std::f64::consts::FRAC_PI_2 + jitter);
        let path = plan_with_margin(grid, &pose, grid.goal(), planner, 0.0).ok();
        let mut ep = Self {
            grid,
            cfg: cfg.clone(),
            planner: planner.clone(),
            oracle: oracle.clone(),
            goal: grid.cell_center(grid.goal()),
            pose,
            path,
            params: None,
            history: VecDeque::new(),
            tick: 0,
            control_ticks: cfg.ticks(1.0 / cfg.control_hz),
            feedback_ticks: cfg.ticks(1.0 / oracle.rate_hz),
            replan_ticks: cfg.ticks(cfg.replan_period),
            noise_rng: rng_for(seed, stream::LIDAR_NOISE),
            recovery_left: 0,
            stall_anchor: 0,
            result: EpisodeResult {
                traversal_time: cfg.timeout,
                outcome: Outcome::Timeout,
                trajectory: vec![pose],
                params_trace: Vec::new(),
                feedback_count: 0,
                no_path: false,
                recoveries: 0,
                clamped_feedback: 0,
            },
            done: false,
        };
        if ep.path.is_none() {
            ep.result.no_path = true;
            ep.done = true;
        }
        Ok(ep)
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn elapsed(&self) -> f64 {
        self.tick as f64 * self.cfg.dt()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    /// Active parameters, once the first control tick has run.
    pub fn params(&self) -> Option<&(ParamChoice, PlannerParams)> {
        self.params.as_ref()
    }

    pub fn path(&self) -> Option<&GlobalPath> {
        self.path.as_ref()
    }

    pub fn is_control_tick(&self) -> bool {
        self.tick.is_multiple_of(self.control_ticks)
    }

    /// Lidar scan and local goal at the current pose.
    pub fn observe(&mut self) -> Result<(crate::world::Scan, RobotState), GatewayError> {
        let scan = raycast_noisy(
            self.grid,
            &self.pose,
            self.cfg.lidar_max_range,
            self.cfg.lidar_noise_std,
            &mut self.noise_rng,
        )?;
        let g = self.local_goal();
        let state = make_state(&scan, g);
        Ok((scan, state))
    }

    fn local_goal(&self) -> f64 {
        match &self.path {
            Some(p) if !p.waypoints.is_empty() => local_goal(p, &self.pose, self.planner.local_goal_lookahead),
            _ => 0.0,
        }
    }

    /// The control tick a feedback arriving now refers to.
    pub fn labelled_state(&self) -> Option<&(u64, RobotState, ParamChoice)> {
        let delay = (self.cfg.reaction_delay * self.cfg.sim_hz).round() as u64;
        let target = self.tick.checked_sub(delay)?;
        self.history.iter().rev().find(|(t, _, _)| *t <= target)
    }

    /// Advances one sim tick.
    pub fn step<S: ParamSelector + ?Sized>(&mut self, selector: &mut S) -> Result<TickReport, GatewayError> {
        let mut report = TickReport::default();
        if self.done {
            return Ok(report);
        }
        if self.pose.distance_to(self.goal.0, self.goal.1) <= self.cfg.goal_tolerance {
            self.finish(Outcome::Success, self.elapsed());
            return Ok(report);
        }
        if self.elapsed() >= self.cfg.timeout - 1e-9 {
            self.finish(Outcome::Timeout, self.cfg.timeout);
            return Ok(report);
        }

        if self.is_control_tick() {
            let (_, state) = self.observe()?;
            let chosen = selector.select(&state)?;
            chosen.1.validate()?;
            self.result.params_trace.push((self.tick, chosen.0));
            self.params = Some(chosen);
            self.history.push_back((self.tick, state.clone(), chosen.0));
            let keep = self.control_ticks * 2 + (self.cfg.reaction_delay * self.cfg.sim_hz).ceil() as u64;
            while self.history.front().is_some_and(|(t, _, _)| t + keep < self.tick) {
                self.history.pop_front();
            }
            report.control = Some(state);
        }
        let (_, params) = self.params.expect("first tick is a control tick");

        if self.tick.is_multiple_of(self.replan_ticks) {
            if let Some(p) = self.replan(params.inflation_radius) {
                self.path = Some(p);
            }
        }
        let twist = self.command(&params)?;

        if self.cfg.mode == FeedbackMode::Oracle && self.tick.is_multiple_of(self.feedback_ticks) {
            report.feedback = self.oracle_record(twist);
        }

        self.pose = step_dynamics(self.pose, twist, self.cfg.dt());
        self.tick += 1;
        self.result.trajectory.push(self.pose);
        if check_collision(self.grid, &self.pose, self.planner.footprint_radius) {
            self.finish(Outcome::Collision, self.elapsed());
        }
        Ok(report)
    }

    /// Global path keeping one extra cell of slack beyond the inflation
    /// margin so sampled rollouts fit, falling back to the bare margin and
    /// then to the footprint.
    fn replan(&self, margin: f64) -> Option<GlobalPath> {
        let slack = PlannerConfig {
            footprint_radius: self.planner.footprint_radius + margin + self.grid.resolution(),
            ..self.planner.clone()
        };
        plan_global(self.grid, &self.pose, self.grid.goal(), &slack)
            .or_else(|_| plan_with_margin(self.grid, &self.pose, self.grid.goal(), &self.planner, margin))
            .ok()
    }

    /// DWA's command, or the recovery rotation while recovering. Recovery
    /// starts when DWA finds no motion, settles on standing still, or the
    /// robot made no progress over the stall window; it turns towards the
    /// local goal until aligned or `RECOVERY_TIME` runs out.
    fn command(&mut self, params: &PlannerParams) -> Result<Twist, GatewayError> {
        let path = self.path.as_ref().expect("episode has a path");
        if self.recovery_left > 0 {
            if self.local_goal().abs() > RECOVERY_ALIGN {
                self.recovery_left -= 1;
                self.result.recoveries += 1;
                return Ok(recovery_twist(path, &self.pose, params, &self.planner));
            }
            self.recovery_left = 0;
            self.stall_anchor = self.tick;
        }
        let twist = match dwa_plan(self.grid, &self.pose, path, params, &self.planner) {
            Ok(t) => Some(t),
            Err(PlanError::NoFeasibleMotion) => self.escape(path, params)?,
            Err(e) => return Err(e.into()),
        };
        let stalled = self.tick >= self.stall_anchor + self.cfg.ticks(STALL_WINDOW) && {
            let then = self.result.trajectory[self.result.trajectory.len() - 1 - self.cfg.ticks(STALL_WINDOW) as usize];
            self.pose.distance_to(then.x, then.y) < STALL_DISTANCE
        };
        match twist {
            Some(t) if !stalled && (t.v != 0.0 || t.w != 0.0) => Ok(t),
            _ => {
                self.recovery_left = self.cfg.ticks(RECOVERY_TIME);
                self.result.recoveries += 1;
                Ok(recovery_twist(path, &self.pose, params, &self.planner))
            }
        }
    }

    /// Inside the inflation margin every rollout fails the inflated check,
    /// including standing still. Retry with the margin shrunk to the current
    /// clearance so motions that do not get closer to obstacles survive.
    fn escape(&self, path: &GlobalPath, params: &PlannerParams) -> Result<Option<Twist>, GatewayError> {
        let clearance = self.grid.distance_field().clearance_lower_bound(self.pose.x, self.pose.y);
        let margin = clearance - self.planner.footprint_radius - 1e-9;
        if margin <= 0.0 || margin >= params.inflation_radius {
            return Ok(None);
        }
        let shrunk = PlannerParams {
            inflation_radius: margin,
            ..*params
        };
        match dwa_plan(self.grid, &self.pose, path, &shrunk, &self.planner) {
            Ok(t) => Ok(Some(t)),
            Err(PlanError::NoFeasibleMotion) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn oracle_record(&mut self, twist: Twist) -> Option<FeedbackRecord> {
        let g = self.local_goal();
        let (feedback, clamped) = discretize_saturating(oracle_feedback(twist.v, g), &self.oracle);
        if clamped {
            self.result.clamped_feedback += 1;
        }
        let (_, state, choice) = self.labelled_state()?.clone();
        self.result.feedback_count += 1;
        Some(FeedbackRecord {
            state,
            params: choice,
            feedback,
            timestamp: self.tick,
            source: FeedbackSource::Oracle,
        })
    }

    /// Counts a feedback delivered from outside (human mode).
    pub fn count_feedback(&mut self) {
        self.result.feedback_count += 1;
    }

    fn finish(&mut self, outcome: Outcome, time: f64) {
        self.done = true;
        self.result.outcome = outcome;
        self.result.traversal_time = if outcome == Outcome::Success { time } else { self.cfg.timeout };
    }

    /// Runs to completion, sending every feedback record to `sink`.
    pub fn run<S, F>(mut self, selector: &mut S, mut sink: F) -> Result<EpisodeResult, GatewayError>
    where
        S: ParamSelector + ?Sized,
        F: FnMut(FeedbackRecord) -> Result<(), GatewayError>,
    {
        while !self.done {
            if let Some(r) = self.step(selector)?.feedback {
                sink(r)?;
            }
        }
        Ok(self.result)
    }

    /// Outcome so far; `Timeout` while the episode runs.
    pub fn outcome(&self) -> Outcome {
        self.result.outcome
    }

    pub fn into_result(self) -> EpisodeResult {
        self.result
    }
}

/// Runs one episode to completion; oracle feedback is returned alongside.
pub fn run_episode<S: ParamSelector + ?Sized>(
    grid: &OccupancyGrid,
    selector: &mut S,
    cfg: &EpisodeConfig,
    planner: &PlannerConfig,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<(EpisodeResult, Vec<FeedbackRecord>), GatewayError> {
    let mut records = Vec::new();
    let result = Episode::new(grid, cfg, planner, oracle, seed)?.run(selector, |r| {
        records.push(r);
        Ok(())
    })?;
    Ok((result, records))
}
