use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::episode::{select_discrete, Episode, EpisodeConfig, Exploration, FeedbackMode, Outcome, ParamSelector};
use super::GatewayError;
use crate::apple::{
    EpsilonSchedule, FeedbackDataset, FeedbackRecord, LearnError, ParamChoice, Policy, PolicyCheckpoint,
};
use crate::oracle::OracleConfig;
use crate::planner::{plan_global, ParameterLibrary, PlannerConfig, PlannerParams, RobotState};
use crate::rng::{child_seed, rng_for, stream, SimRng};
use crate::world::{generate_with, CaConfig, OccupancyGrid, Pose};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DATASET_FILE: &str = "dataset.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Training stops once this many feedback records were collected.
    pub feedback_budget: u64,
    /// Dataset size before the first gradient step.
    pub warmup: usize,
    pub batch_size: usize,
    pub dataset_capacity: usize,
    /// Episodes between checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            feedback_budget: 100_000,
            warmup: 500,
            batch_size: 64,
            dataset_capacity: 1_000_000,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.batch_size == 0 || self.dataset_capacity == 0 || self.checkpoint_every == 0 {
            return Err(GatewayError::InvalidConfig(
                "batch_size, dataset_capacity and checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a training run needs besides the environments.
#[derive(Debug, Clone)]
pub struct TrainRun<'a> {
    pub library: &'a ParameterLibrary,
    pub episode: EpisodeConfig,
    pub planner: PlannerConfig,
    pub oracle: OracleConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Directory for the checkpoint and the dataset log.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub episodes: u64,
    pub successes: u64,
    pub collisions: u64,
    pub timeouts: u64,
    pub gradient_steps: u64,
    pub mean_loss: f64,
}

/// Oracle-feedback training.
///
/// Cycles the environments, one episode each, until the feedback budget is
/// spent. Every feedback record is appended to the dataset; every control
/// tick with at least `warmup` records runs one predictor step (continuous
/// mode: critic, actor and temperature steps on the same batch). Random
/// streams are derived from the seed and the episode counter, so resuming
/// from a checkpoint written at an episode boundary continues exactly as an
/// uninterrupted run.
pub fn train(
    envs: &[OccupancyGrid],
    mut ck: PolicyCheckpoint,
    dataset: &mut FeedbackDataset,
    run: &TrainRun,
) -> Result<(PolicyCheckpoint, TrainReport), GatewayError> {
    if envs.is_empty() {
        return Err(GatewayError::InvalidConfig("no training environments".into()));
    }
    run.train.validate()?;
    run.episode.validate()?;
    if run.episode.mode != FeedbackMode::Oracle {
        return Err(GatewayError::InvalidConfig("offline training needs oracle mode".into()));
    }
    if let Policy::Discrete(p) = &mut ck.policy {
        p.schedule = EpsilonSchedule::over_half_of(run.train.feedback_budget);
        p.anneal(ck.global_step);
    }
    let mut report = TrainReport::default();
    let mut loss_sum = 0.0;
    let mut idle = 0usize;
    while ck.feedback_count < run.train.feedback_budget {
        let episode_seed = child_seed(run.seed, ck.episodes);
        let grid = &envs[(ck.episodes % envs.len() as u64) as usize];
        ck.episodes += 1;
        let mut select_rng = rng_for(episode_seed, stream::EXPLORATION);
        let mut batch_rng = rng_for(episode_seed, stream::BATCH);
        let mut noise_rng = rng_for(episode_seed, stream::ACTOR_NOISE);
        let mut ep = Episode::new(grid, &run.episode, &run.planner, &run.oracle, episode_seed)?;
        let before = ck.feedback_count;
        while !ep.is_done() && ck.feedback_count < run.train.feedback_budget {
            let tick = {
                let policy = &ck.policy;
                let mut sel = |s: &RobotState| choose(policy, run.library, s, run.episode.explore, &mut select_rng);
                ep.step(&mut sel)?
            };
            if let Some(r) = tick.feedback {
                dataset.append(r)?;
                ck.feedback_count += 1;
            }
            if tick.control.is_some() {
                ck.global_step += 1;
                if dataset.len() >= run.train.warmup.max(1) {
                    let batch = dataset.sample(run.train.batch_size, &mut batch_rng);
                    loss_sum += gradient_step(&mut ck.policy, &batch, &mut noise_rng)?;
                    report.gradient_steps += 1;
                }
                if let Policy::Discrete(p) = &mut ck.policy {
                    p.anneal(ck.global_step);
                }
            }
        }
        let result = ep.into_result();
        report.episodes += 1;
        match result.outcome {
            Outcome::Success => report.successes += 1,
            Outcome::Collision => report.collisions += 1,
            Outcome::Timeout => report.timeouts += 1,
        }
        info!(
            "episode {} {:?} in {:.1}s, {} records",
            ck.episodes, result.outcome, result.traversal_time, ck.feedback_count
        );
        if ck.feedback_count == before {
            idle += 1;
            if idle >= envs.len() {
                return Err(GatewayError::InvalidConfig("no environment produces feedback".into()));
            }
        } else {
            idle = 0;
        }
        if let Some(dir) = &run.out {
            if ck.episodes.is_multiple_of(run.train.checkpoint_every) {
                save_run(dir, &ck, dataset)?;
            }
        }
    }
    if let Some(dir) = &run.out {
        save_run(dir, &ck, dataset)?;
    }
    report.mean_loss = if report.gradient_steps > 0 {
        loss_sum / report.gradient_steps as f64
    } else {
        0.0
    };
    Ok((ck, report))
}

fn choose(
    policy: &Policy,
    library: &ParameterLibrary,
    state: &RobotState,
    explore: bool,
    rng: &mut SimRng,
) -> Result<(ParamChoice, PlannerParams), LearnError> {
    match policy {
        Policy::Discrete(p) => {
            let mode = if explore { Exploration::Epsilon } else { Exploration::Greedy };
            let i = select_discrete(p, library, state, mode, rng)?;
            Ok((ParamChoice::Index(i), library.entries()[i]))
        }
        Policy::Continuous(p) => {
            let a = p.sample(state, !explore, rng)?;
            Ok((ParamChoice::Values(a.params), a.params))
        }
    }
}

pub(crate) fn gradient_step(
    policy: &mut Policy,
    batch: &[&FeedbackRecord],
    rng: &mut SimRng,
) -> Result<f64, LearnError> {
    match policy {
        Policy::Discrete(p) => p.train_step(batch),
        Policy::Continuous(p) => {
            let loss = p.train_critic(batch)?;
            let states: Vec<&RobotState> = batch.iter().map(|r| &r.state).collect();
            p.train_actor(&states, rng)?;
            p.update_temperature(&states, rng)?;
            Ok(loss)
        }
    }
}

/// Writes the checkpoint atomically after flushing the dataset log.
fn save_run(dir: &Path, ck: &PolicyCheckpoint, dataset: &mut FeedbackDataset) -> Result<(), GatewayError> {
    dataset.flush()?;
    ck.save(&dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

/// Resumes from `dir` when it holds a checkpoint: the dataset log is cut
/// back to the records the checkpoint has seen and reopened for appending.
/// Otherwise starts `fresh` with a new log.
pub fn open_run(
    dir: &Path,
    fresh: impl FnOnce() -> Result<PolicyCheckpoint, GatewayError>,
    capacity: usize,
) -> Result<(PolicyCheckpoint, FeedbackDataset), GatewayError> {
    std::fs::create_dir_all(dir)?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    let log_path = dir.join(DATASET_FILE);
    if !ck_path.exists() {
        let ds = FeedbackDataset::new(capacity).with_log(&log_path)?;
        return Ok((fresh()?, ds));
    }
    let ck = PolicyCheckpoint::load(&ck_path)?;
    let text = std::fs::read_to_string(&log_path).unwrap_or_default();
    let kept: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if (kept.len() as u64) < ck.feedback_count {
        warn!(
            "dataset log has {} records, checkpoint expects {}",
            kept.len(),
            ck.feedback_count
        );
    }
    let kept = &kept[..kept.len().min(ck.feedback_count as usize)];
    let mut body = kept.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    std::fs::write(&log_path, body)?;
    let ds = FeedbackDataset::load(&log_path, capacity)?.with_appending_log(&log_path)?;
    Ok((ck, ds))
}

/// Seeded benchmark environments, each with a global path from start to goal.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub seeds: Vec<u64>,
    pub grids: Vec<OccupancyGrid>,
}

/// Generates `n` environments; candidate seeds without a start-to-goal path
/// are skipped.
pub fn generate_benchmark(n: usize, ca: &CaConfig, planner: &PlannerConfig, seed: u64) -> Result<Benchmark, GatewayError> {
    let mut out = Benchmark {
        seeds: Vec::with_capacity(n),
        grids: Vec::with_capacity(n),
    };
    let mut k = 0u64;
    let limit = 64 * n as u64 + 64;
    while out.grids.len() < n {
        if k >= limit {
            return Err(GatewayError::InvalidConfig(format!(
                "only {} of {n} environments found in {limit} seeds",
                out.grids.len()
            )));
        }
        let s = child_seed(seed, k);
        k += 1;
        let Ok(grid) = generate_with(s, ca) else { continue };
        let (x, y) = grid.cell_center(grid.start());
        if plan_global(&grid, &Pose::new(x, y, 0.0), grid.goal(), planner).is_ok() {
            out.seeds.push(s);
            out.grids.push(grid);
        }
    }
    Ok(out)
}

/// Traversal times of one method, `runs[env][run]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub times: Vec<Vec<f64>>,
    pub outcomes: Vec<Vec<Outcome>>,
}

/// Runs every environment `runs` times with selectors from `make`. Run `r`
/// on environment `i` uses the same episode seed for every method.
pub fn evaluate<F, S>(
    envs: &[OccupancyGrid],
    runs: usize,
    episode: &EpisodeConfig,
    planner: &PlannerConfig,
    seed: u64,
    mut make: F,
) -> Result<EvalRun, GatewayError>
where
    F: FnMut(u64) -> S,
    S: ParamSelector,
{
    let oracle = OracleConfig::default();
    let cfg = episode;
    let mut out = EvalRun {
        times: Vec::with_capacity(envs.len()),
        outcomes: Vec::with_capacity(envs.len()),
    };
    for (i, grid) in envs.iter().enumerate() {
        let env_seed = child_seed(seed, i as u64);
        let mut times = Vec::with_capacity(runs);
        let mut outcomes = Vec::with_capacity(runs);
        for r in 0..runs {
            let s = child_seed(env_seed, r as u64);
            let mut sel = make(s);
            let res = Episode::new(grid, cfg, planner, &oracle, s)?.run(&mut sel, |_| Ok(()))?;
            times.push(res.traversal_time);
            outcomes.push(res.outcome);
        }
        out.times.push(times);
        out.outcomes.push(outcomes);
    }
    Ok(out)
}
