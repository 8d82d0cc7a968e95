//! Run configuration: every tunable in one TOML file.
//!
//! Values come from built-in defaults, then the config file, then command
//! line flags, each overriding the one before.

use std::path::{Path, PathBuf};

use apple_core::apple::{ContinuousConfig, ContinuousPolicy, DiscretePolicy, EpsilonSchedule, Policy, PolicyCheckpoint};
use apple_core::gateway::{EpisodeConfig, FeedbackMode, ServeConfig, TrainConfig};
use apple_core::nn::DEFAULT_LR;
use apple_core::oracle::{Levels, OracleConfig};
use apple_core::planner::{LibraryFile, ParamBounds, ParameterLibrary, PlannerConfig, PARAM_DIM};
use apple_core::rng::{rng_for, stream};
use apple_core::world::{CaConfig, Difficulty};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; environments, training and evaluation derive from it.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Parameter library file; the built-in Jackal library when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub library: Option<PathBuf>,
    pub world: WorldConfig,
    pub planner: PlannerConfig,
    pub episode: EpisodeConfig,
    pub oracle: OracleConfig,
    pub learner: LearnerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            library: None,
            world: WorldConfig::default(),
            planner: PlannerConfig::default(),
            episode: EpisodeConfig::default(),
            oracle: OracleConfig::default(),
            learner: LearnerConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Environments generated when no environment directory is given.
    pub envs: usize,
    pub fill_prob: f64,
    pub iterations: u32,
    pub size: usize,
    pub resolution: f64,
    pub max_retries: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let ca = CaConfig::default();
        Self {
            envs: 10,
            fill_prob: ca.fill_prob,
            iterations: ca.iterations,
            size: ca.size,
            resolution: ca.resolution,
            max_retries: ca.max_retries,
        }
    }
}

impl WorldConfig {
    pub fn ca(&self) -> CaConfig {
        CaConfig {
            fill_prob: self.fill_prob,
            iterations: self.iterations,
            size: self.size,
            resolution: self.resolution,
            max_retries: self.max_retries,
        }
    }

    pub fn set_difficulty(&mut self, d: Difficulty) {
        self.fill_prob = d.fill_prob();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LearnerMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub mode: LearnerMode,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Loss weight of auto-positive records.
    pub auto_positive_weight: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub alpha_lr: f64,
    pub init_log_alpha: f64,
    pub target_entropy: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let s = EpsilonSchedule::default();
        Self {
            mode: LearnerMode::Discrete,
            lr: DEFAULT_LR,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            auto_positive_weight: 1.0,
            epsilon_start: s.start,
            epsilon_end: s.end,
            alpha_lr: DEFAULT_LR,
            init_log_alpha: 0.0,
            target_entropy: -(PARAM_DIM as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub runs: usize,
    /// Significance level of the per-environment t-tests.
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { runs: 20, alpha: 0.05 }
    }
}

/// Live-feedback settings; the episode section supplies everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub port: u16,
    pub control_hz: f64,
    pub feedback_hz: f64,
    pub levels: u32,
    pub reaction_delay: f64,
    pub random_explore_prob: f64,
    /// Wall-clock speed-up; 0 runs unthrottled.
    pub time_scale: f64,
    /// 0 runs until interrupted.
    pub max_episodes: u64,
    pub client_queue: usize,
}

impl Default for ServeSection {
    fn default() -> Self {
        let human = EpisodeConfig::human();
        let s = ServeConfig::default();
        Self {
            port: 8765,
            control_hz: human.control_hz,
            feedback_hz: s.feedback_hz,
            levels: s.levels,
            reaction_delay: human.reaction_delay,
            random_explore_prob: human.random_explore_prob,
            time_scale: s.time_scale,
            max_episodes: s.max_episodes,
            client_queue: s.client_queue,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let w = &self.world;
        check(w.envs >= 1, || "world.envs must be at least 1".into())?;
        check((0.0..1.0).contains(&w.fill_prob), || format!("world.fill_prob {} not in [0, 1)", w.fill_prob))?;
        check(w.size >= 10, || format!("world.size {} < 10", w.size))?;
        check(w.resolution > 0.0 && w.resolution.is_finite(), || "world.resolution must be positive".into())?;
        let p = &self.planner;
        for (name, v) in [
            ("footprint_radius", p.footprint_radius),
            ("horizon", p.horizon),
            ("rollout_dt", p.rollout_dt),
            ("local_goal_lookahead", p.local_goal_lookahead),
            ("dwa_goal_lookahead", p.dwa_goal_lookahead),
            ("min_clearance", p.min_clearance),
        ] {
            check(v > 0.0 && v.is_finite(), || format!("planner.{name} must be positive"))?;
        }
        check(p.forward_point_distance >= 0.0, || "planner.forward_point_distance must be >= 0".into())?;
        self.episode.validate()?;
        self.oracle.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate()?;
        let l = &self.learner;
        check(l.lr > 0.0 && l.alpha_lr > 0.0, || "learner learning rates must be positive".into())?;
        check((0.0..1.0).contains(&l.adam_beta1) && (0.0..1.0).contains(&l.adam_beta2), || {
            "learner adam betas must be in [0, 1)".into()
        })?;
        check(l.adam_eps > 0.0, || "learner.adam_eps must be positive".into())?;
        check(l.auto_positive_weight >= 0.0, || "learner.auto_positive_weight must be >= 0".into())?;
        check(
            (0.0..=1.0).contains(&l.epsilon_start) && (0.0..=1.0).contains(&l.epsilon_end),
            || "learner epsilons must be in [0, 1]".into(),
        )?;
        check(self.eval.runs >= 2, || "eval.runs must be at least 2".into())?;
        check(self.eval.alpha > 0.0 && self.eval.alpha < 1.0, || "eval.alpha must be in (0, 1)".into())?;
        self.serve_config()?.validate()?;
        Ok(())
    }

    pub fn library(&self) -> Result<(ParameterLibrary, ParamBounds), CliError> {
        match &self.library {
            None => Ok((ParameterLibrary::jackal(), ParamBounds::default())),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
                LibraryFile::parse(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
            }
        }
    }

    /// An untrained policy for this configuration.
    pub fn fresh_policy(&self, library: &ParameterLibrary, bounds: &ParamBounds, levels: Levels) -> Result<PolicyCheckpoint, CliError> {
        let l = &self.learner;
        let mut rng = rng_for(self.seed, stream::NETWORK_INIT);
        let policy = match l.mode {
            LearnerMode::Discrete => {
                let mut p = DiscretePolicy::new(library.len(), levels, l.lr, &mut rng)?;
                p.optimizer.beta1 = l.adam_beta1;
                p.optimizer.beta2 = l.adam_beta2;
                p.optimizer.eps = l.adam_eps;
                p.auto_positive_weight = l.auto_positive_weight;
                p.schedule.start = l.epsilon_start;
                p.schedule.end = l.epsilon_end;
                p.epsilon = l.epsilon_start;
                Policy::Discrete(p)
            }
            LearnerMode::Continuous => {
                let cfg = ContinuousConfig {
                    lr: l.lr,
                    alpha_lr: l.alpha_lr,
                    init_log_alpha: l.init_log_alpha,
                    target_entropy: l.target_entropy,
                };
                let mut p = ContinuousPolicy::new(bounds.clone(), &cfg, &mut rng)?;
                for opt in [&mut p.actor_opt, &mut p.critic_opt, &mut p.alpha_opt] {
                    opt.beta1 = l.adam_beta1;
                    opt.beta2 = l.adam_beta2;
                    opt.eps = l.adam_eps;
                }
                p.auto_positive_weight = l.auto_positive_weight;
                Policy::Continuous(p)
            }
        };
        Ok(PolicyCheckpoint::new(policy))
    }

    pub fn serve_config(&self) -> Result<ServeConfig, CliError> {
        let s = &self.serve;
        Ok(ServeConfig {
            episode: EpisodeConfig {
                control_hz: s.control_hz,
                mode: FeedbackMode::Human,
                explore: true,
                random_explore_prob: s.random_explore_prob,
                reaction_delay: s.reaction_delay,
                ..self.episode.clone()
            },
            feedback_hz: s.feedback_hz,
            levels: s.levels,
            time_scale: s.time_scale,
            max_episodes: s.max_episodes,
            warmup: self.train.warmup,
            batch_size: self.train.batch_size,
            dataset_capacity: self.train.dataset_capacity,
            client_queue: s.client_queue,
            seed: self.seed,
        })
    }
}
